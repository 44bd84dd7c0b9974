//! Binary PPM (P6) frames and ASCII PLY point clouds.

use std::io::{BufRead, Write};
use std::path::Path;

use super::PointCloud;
use crate::numerics::Tensor;
use crate::{Error, Result};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `H×W×3` tensor with values in `[0, 1]` as 8-bit P6.
pub fn write_ppm<W: Write>(mut w: W, image: &Tensor) -> Result<()> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::shape(format!("PPM image must be H×W×3, got {:?}", image.shape())));
    }
    let (h, wd) = (image.shape()[0], image.shape()[1]);
    let mut buf = format!("P6\n{wd} {h}\n255\n").into_bytes();
    buf.extend(image.data().iter().map(|&v| to_byte(v)));
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a P6 image (maxval ≤ 255) into `H×W×3` values in `[0, 1]`.
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor> {
    let fail = |m: &str| Error::Format(format!("PPM: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| fail("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(fail("only binary P6 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| fail(&format!("bad header field '{s}'")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(fail(&format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = w * h * 3;
    if bytes.len() < pos + n {
        return Err(fail("truncated raster"));
    }
    let scale = maxval as f32;
    let data = bytes[pos..pos + n].iter().map(|&b| (b as f32 / scale).min(1.0)).collect();
    Tensor::new(vec![h, w, 3], data)
}

pub fn save_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ppm(std::io::BufWriter::new(f), image)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    read_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_ply<W: Write>(w: W, cloud: &PointCloud) -> Result<()> {
    if cloud.points.len() != cloud.colors.len() {
        return Err(Error::invalid("point and color counts differ"));
    }
    let mut w = std::io::BufWriter::new(w);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )?;
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        writeln!(w, "{} {} {} {} {} {}", p[0], p[1], p[2], to_byte(c[0]), to_byte(c[1]), to_byte(c[2]))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the ASCII layout produced by [`write_ply`].
pub fn read_ply<R: BufRead>(r: R) -> Result<PointCloud> {
    let fail = |m: String| Error::Format(format!("PLY: {m}"));
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> { Ok(lines.next().transpose()?) };
    if next()?.as_deref() != Some("ply") {
        return Err(fail("missing magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let line = next()?.ok_or_else(|| fail("unterminated header".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] if *fmt != "ascii" => return Err(fail(format!("unsupported format {fmt}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| fail(format!("bad vertex count '{n}'")))?)
            }
            ["property", _, name] => props.push(name.to_string()),
            _ => {}
        }
    }
    let expected = ["x", "y", "z", "red", "green", "blue"];
    if props != expected {
        return Err(fail(format!("expected properties {expected:?}, got {props:?}")));
    }
    let count = count.ok_or_else(|| fail("no vertex element".into()))?;
    let mut cloud = PointCloud::default();
    for i in 0..count {
        let line = next()?.ok_or_else(|| fail(format!("expected {count} vertices, got {i}")))?;
        let v: Vec<f32> = line
            .split_whitespace()
            .map(|s| s.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail(format!("bad vertex line {}", i + 1)))?;
        if v.len() != 6 {
            return Err(fail(format!("vertex line {} has {} fields", i + 1, v.len())));
        }
        cloud.points.push([v[0], v[1], v[2]]);
        cloud.colors.push([v[3] / 255.0, v[4] / 255.0, v[5] / 255.0]);
    }
    Ok(cloud)
}

pub fn save_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(f, cloud)
}
