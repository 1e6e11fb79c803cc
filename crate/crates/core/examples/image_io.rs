//! Writes a synthetic texture pair as PPM images and a TNSR file, reads
//! them back and scores nearest-neighbour upsampling of the low-resolution image.

use paon::data::{gen_sr_textures, read_ppm, read_tnsr, write_ppm, write_tnsr};
use paon::metrics::{psnr_rgb, ssim_y};
use paon::tensor::Tensor;

fn main() -> paon::Result<()> {
    let dir = std::env::temp_dir().join("paon-image-io");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let pair = &gen_sr_textures(1, 32, 2, 5)?[0];
    write_ppm(dir.join("hr.ppm"), &pair.hr)?;
    write_ppm(dir.join("lr.ppm"), &pair.lr)?;
    write_tnsr(dir.join("hr.tnsr"), &pair.hr)?;

    let hr: Tensor<f64> = read_ppm(dir.join("hr.ppm"))?;
    let exact: Tensor<f64> = read_tnsr(dir.join("hr.tnsr"))?;
    let lr: Tensor<f64> = read_ppm(dir.join("lr.ppm"))?;
    let (c, h, w) = (lr.shape()[0], lr.shape()[1], lr.shape()[2]);
    let up = Tensor::from_fn(vec![c, 2 * h, 2 * w], |i| {
        let (ch, rest) = (i / (4 * h * w), i % (4 * h * w));
        let (y, x) = (rest / (2 * w), rest % (2 * w));
        lr.data()[(ch * h + y / 2) * w + x / 2]
    })?;
    println!("tnsr round trip exact: {}", exact == pair.hr);
    println!(
        "nearest x2: PSNR {:.2} dB, SSIM {:.4}",
        psnr_rgb(&up, &hr)?,
        ssim_y(&up, &hr)?
    );
    println!("files in {}", dir.display());
    Ok(())
}
