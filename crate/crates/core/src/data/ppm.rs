//! Binary PPM (P6, maxval 255) images as `(3, H, W)` tensors in `[-1, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{from_8bit, to_8bit};
use crate::tensor::{Scalar, Tensor};

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn encode_ppm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        s => return Err(format_err(format!("PPM needs a (3,H,W) image, got {s:?}"))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    let hw = h * w;
    for i in 0..hw {
        for c in 0..3 {
            out.push(to_8bit(d[c * hw + i].as_f64()));
        }
    }
    Ok(out)
}

pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    // header: magic, width, height, maxval separated by whitespace and
    // comments, then a single whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(format_err("truncated PPM header"));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..i])
                .map_err(|_| format_err("non-ASCII PPM header"))?,
        );
    }
    if fields[0] != "P6" {
        return Err(format_err(format!("expected P6, got {}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(format!("bad PPM header field `{s}`")))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(format_err(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    let pixels = bytes.get(i + 1..).unwrap_or(&[]);
    let hw = h * w;
    if pixels.len() < 3 * hw {
        return Err(format_err("truncated PPM pixel data"));
    }
    let mut data = vec![T::zero(); 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            data[c * hw + p] = T::lit(from_8bit(pixels[3 * p + c]));
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_ppm<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
