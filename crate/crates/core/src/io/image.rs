use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{read_file, write_atomic};

/// Writes one `(1, C, H, W)` image as binary PGM (C = 1) or PPM (C = 3).
/// Values are scaled by 255, rounded and clamped.
pub fn write_pnm<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let [n, c, h, w] = img.shape();
    if n != 1 || (c != 1 && c != 3) {
        return Err(Error::InvalidArgument(format!(
            "PNM output needs one 1- or 3-channel image, got shape {:?}",
            img.shape()
        )));
    }
    let kind = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{kind}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = (img.get([0, ch, y, x]).as_f64() * 255.0)
                    .round()
                    .clamp(0.0, 255.0);
                out.push(v as u8);
            }
        }
    }
    write_atomic(path, &out)
}

/// Reads a binary PGM/PPM with maxval 255 into `(1, C, H, W)` in `[0, 1]`.
pub fn read_pnm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = read_file(path)?;
    let err = |offset: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.to_string(),
    };
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
            return Err(err(pos, "file ends inside the header"));
        }
        fields.push((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ));
    }
    let c = match fields[0].1.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(err(0, "expected P5 or P6")),
    };
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| err(fields[i].0, "bad header number"))
    };
    let (w, h, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 {
        return Err(err(fields[3].0, "only maxval 255 is supported"));
    }
    pos += 1;
    let need = w * h * c;
    let body = bytes
        .get(pos..pos + need)
        .ok_or_else(|| err(bytes.len(), "truncated pixel data"))?;
    Ok(Tensor::from_fn([1, c, h, w], |[_, ch, y, x]| {
        T::from_f64_lossy(body[(y * w + x) * c + ch] as f64 / 255.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let img = Tensor::<f32>::from_fn([1, c, 3, 5], |[_, ch, y, x]| {
                (((ch * 15 + y * 5 + x) * 5) as f64 / 255.0) as f32
            });
            let p = dir.path().join(format!("img{c}.pnm"));
            write_pnm(&p, &img).unwrap();
            let back: Tensor<f32> = read_pnm(&p).unwrap();
            assert!(back.bitwise_eq(&img));
        }
    }

    #[test]
    fn header_comments_and_clamping() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        std::fs::write(&p, b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        let t: Tensor<f64> = read_pnm(&p).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
        let img = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![-0.3, 1.7]).unwrap();
        write_pnm(&p, &img).unwrap();
        assert_eq!(read_pnm::<f64>(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn truncated_body_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ppm");
        std::fs::write(&p, b"P6 2 2 255\n\x00\x00").unwrap();
        assert!(matches!(read_pnm::<f32>(&p), Err(Error::Format { .. })));
    }
}
