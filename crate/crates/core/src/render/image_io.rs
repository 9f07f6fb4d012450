//! Map export: binary PPM or PNG for color, 16-bit PGM for depth.
//!
//! Depth PGMs carry a `# meters_per_unit <scale>` comment after the magic; a
//! stored value `v` decodes to `v * scale` meters. Zero means no depth.

use std::io::Write;
use std::path::Path;

use crate::nn::DenseArray;
use crate::{Error, Result};

pub const DEFAULT_METERS_PER_UNIT: f64 = 0.001;

fn rgb_dims(map: &DenseArray) -> Result<(usize, usize)> {
    match *map.shape() {
        [h, w, 3] => Ok((h, w)),
        _ => Err(Error::dim("[h, w, 3]", format!("{:?}", map.shape()))),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_bytes(map: &DenseArray) -> Result<Vec<u8>> {
    rgb_dims(map)?;
    Ok(map.data().iter().map(|&v| to_u8(v)).collect())
}

pub fn encode_ppm(map: &DenseArray) -> Result<Vec<u8>> {
    let (h, w) = rgb_dims(map)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(rgb_bytes(map)?);
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<DenseArray> {
    let (fields, body) = pnm_header(bytes, b"P6", 3)?;
    let (w, h, max) = (fields[0], fields[1], fields[2]);
    if max != 255 || body.len() != w * h * 3 {
        return Err(Error::Format(format!(
            "PPM body of {} bytes does not fit {w}x{h}",
            body.len()
        )));
    }
    DenseArray::new(
        vec![h, w, 3],
        body.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Writes `.png` through the image crate and anything else as PPM.
pub fn save_color(map: &DenseArray, path: &Path) -> Result<()> {
    let (h, w) = rgb_dims(map)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        image::save_buffer(
            path,
            &rgb_bytes(map)?,
            w as u32,
            h as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    } else {
        std::fs::write(path, encode_ppm(map)?).map_err(|e| Error::io(path, e))
    }
}

pub fn load_color(path: &Path) -> Result<DenseArray> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        DenseArray::new(
            vec![h, w, 3],
            img.into_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        )
    } else {
        decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// `depth` is `[h, w]` in meters; `mask` marks pixels carrying a value.
pub fn encode_depth_pgm(
    depth: &DenseArray,
    mask: Option<&[bool]>,
    meters_per_unit: f64,
) -> Result<Vec<u8>> {
    let [h, w] = *depth.shape() else {
        return Err(Error::dim("[h, w]", format!("{:?}", depth.shape())));
    };
    if !(meters_per_unit > 0.0) {
        return Err(Error::config(format!(
            "meters_per_unit must be positive, got {meters_per_unit}"
        )));
    }
    let mut out = Vec::new();
    write!(
        out,
        "P5\n# meters_per_unit {meters_per_unit:e}\n{w} {h}\n65535\n"
    )
    .expect("vec write");
    for (i, &d) in depth.data().iter().enumerate() {
        let valid = mask.map_or(true, |m| m[i]);
        let v = if valid && d.is_finite() && d > 0.0 {
            (d / meters_per_unit).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

/// Returns depth in meters, the validity mask and the scale.
pub fn decode_depth_pgm(bytes: &[u8]) -> Result<(DenseArray, Vec<bool>, f64)> {
    let text_end = bytes.len().min(256);
    let head = String::from_utf8_lossy(&bytes[..text_end]);
    let scale = head
        .lines()
        .find_map(|l| l.strip_prefix("# meters_per_unit "))
        .ok_or_else(|| Error::Format("depth PGM lacks a meters_per_unit comment".into()))?
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Format(format!("bad meters_per_unit: {e}")))?;
    let (fields, body) = pnm_header(bytes, b"P5", 3)?;
    let (w, h, max) = (fields[0], fields[1], fields[2]);
    if max != 65535 || body.len() != w * h * 2 {
        return Err(Error::Format(format!(
            "16-bit PGM body of {} bytes does not fit {w}x{h}",
            body.len()
        )));
    }
    let raw: Vec<u16> = body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    let mask = raw.iter().map(|&v| v > 0).collect();
    let depth = DenseArray::new(vec![h, w], raw.iter().map(|&v| v as f64 * scale).collect())?;
    Ok((depth, mask, scale))
}

/// Parses `magic` plus `n` whitespace-separated integers, skipping `#` comments;
/// returns the fields and the binary body after the single separator byte.
fn pnm_header<'a>(bytes: &'a [u8], magic: &[u8], n: usize) -> Result<(Vec<usize>, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::Format(format!(
            "expected {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = magic.len();
    let mut fields = Vec::with_capacity(n);
    while fields.len() < n {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        let s = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields.push(
            s.parse()
                .map_err(|e| Error::Format(format!("PNM header field: {e}")))?,
        );
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("PNM header not terminated".into()));
    }
    Ok((fields, &bytes[pos + 1..]))
}

pub fn save_depth(
    depth: &DenseArray,
    mask: Option<&[bool]>,
    meters_per_unit: f64,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_depth_pgm(depth, mask, meters_per_unit)?)
        .map_err(|e| Error::io(path, e))
}

pub fn load_depth(path: &Path) -> Result<(DenseArray, Vec<bool>, f64)> {
    decode_depth_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
