//! Dataset ingestion and preprocessing: the CIFAR-10 binary format,
//! binary PPM (P6) image folders for CelebA, the center-crop/resize
//! pipeline, and a synthetic CIFAR-format generator for self-contained
//! desk-scale runs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images as N x 3 x H x W with values in [0, 1].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub split: Split,
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First `n` images (or all, if fewer).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Ok(Dataset {
            images: self.images.gather_rows(&(0..n).collect::<Vec<_>>())?,
            split: self.split,
            source: self.source.clone(),
        })
    }
}

const CIFAR_RECORD: usize = 3073; // 1 label byte + 3 * 1024 pixels
const CIFAR_PIXELS: usize = 3072;

fn parse_cifar_file(path: &Path, out: &mut Vec<f32>) -> Result<usize> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a positive multiple of {CIFAR_RECORD}",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    out.reserve(n * CIFAR_PIXELS);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        // rec[0] is the label; unsupervised training discards it.
        out.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(n)
}

/// Load the binary-version CIFAR-10 files from `dir`:
/// `data_batch_1..5.bin` for train, `test_batch.bin` for test.
pub fn load_cifar10(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let files: Vec<std::path::PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    let mut data = Vec::new();
    let mut n = 0;
    for f in &files {
        n += parse_cifar_file(f, &mut data)?;
    }
    Ok(Dataset {
        images: Tensor::new(vec![n, 3, 32, 32], data)?,
        split,
        source: format!("cifar10:{}", dir.display()),
    })
}

/// Parse a binary PPM (P6) file into a 3 x H x W tensor in [0, 1].
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    // Header tokens separated by whitespace; '#' starts a comment.
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token(bytes)?;
    if magic != "P6" {
        return Err(Error::Format(format!("not a P6 PPM (magic '{magic}')")));
    }
    let w: usize = next_token(bytes)?
        .parse()
        .map_err(|_| Error::Format("bad PPM width".into()))?;
    let h: usize = next_token(bytes)?
        .parse()
        .map_err(|_| Error::Format("bad PPM height".into()))?;
    let maxval: usize = next_token(bytes)?
        .parse()
        .map_err(|_| Error::Format("bad PPM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(Error::Format(format!(
            "PPM payload short: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    // Interleaved RGB -> planar CHW.
    let px = &bytes[pos..pos + need];
    let mut data = vec![0f32; need];
    for i in 0..w * h {
        for c in 0..3 {
            data[c * w * h + i] = px[3 * i + c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub const CELEBA_SRC_H: usize = 218;
pub const CELEBA_SRC_W: usize = 178;
const CELEBA_CROP: usize = 140;
const CELEBA_ROW0: usize = 39;
const CELEBA_COL0: usize = 19;
pub const CELEBA_OUT: usize = 64;

/// Center-crop a 3 x 218 x 178 image to 140 x 140 (rows 39..179,
/// cols 19..159) and bilinearly resize to 3 x 64 x 64.
pub fn preprocess_celeba(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    if image.shape() != [3, CELEBA_SRC_H, CELEBA_SRC_W] {
        return Err(Error::shape(format!(
            "expected 3x{CELEBA_SRC_H}x{CELEBA_SRC_W}, got {:?}",
            image.shape()
        )));
    }
    let scale = CELEBA_CROP as f32 / CELEBA_OUT as f32;
    let mut out = Tensor::zeros(&[3, CELEBA_OUT, CELEBA_OUT]);
    let src = image.data();
    for c in 0..3 {
        for oy in 0..CELEBA_OUT {
            // Half-pixel centers, no corner alignment.
            let sy = ((oy as f32 + 0.5) * scale - 0.5).clamp(0.0, (CELEBA_CROP - 1) as f32);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(CELEBA_CROP - 1);
            let fy = sy - y0 as f32;
            for ox in 0..CELEBA_OUT {
                let sx = ((ox as f32 + 0.5) * scale - 0.5).clamp(0.0, (CELEBA_CROP - 1) as f32);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(CELEBA_CROP - 1);
                let fx = sx - x0 as f32;
                let at = |y: usize, x: usize| {
                    src[c * CELEBA_SRC_H * CELEBA_SRC_W
                        + (CELEBA_ROW0 + y) * CELEBA_SRC_W
                        + CELEBA_COL0
                        + x]
                };
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.data_mut()[c * CELEBA_OUT * CELEBA_OUT + oy * CELEBA_OUT + ox] =
                    top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

/// Load a folder of uniform 178 x 218 P6 PPMs in filename-sorted order,
/// preprocessing each to 3 x 64 x 64. `limit` caps the count.
pub fn load_image_folder(dir: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "ppm").unwrap_or(false))
        .collect();
    paths.sort();
    if let Some(l) = limit {
        paths.truncate(l);
    }
    if paths.is_empty() {
        return Err(Error::Data(format!("no .ppm files in {}", dir.display())));
    }
    let mut data = Vec::with_capacity(paths.len() * 3 * CELEBA_OUT * CELEBA_OUT);
    for p in &paths {
        let bytes = std::fs::read(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        let img = parse_ppm(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        let img = preprocess_celeba(&img)?;
        data.extend_from_slice(img.data());
    }
    Ok(Dataset {
        images: Tensor::new(vec![paths.len(), 3, CELEBA_OUT, CELEBA_OUT], data)?,
        split: Split::Train,
        source: format!("folder:{}", dir.display()),
    })
}

/// Write CIFAR-10-format binary batches of procedurally generated
/// images to `dir` (`data_batch_1..5.bin` and `test_batch.bin`).
///
/// Images are smooth colored blobs on gradient backgrounds: structured
/// enough for an autoencoder to learn, with per-"class" palettes so the
/// latent space is multi-modal.
pub fn generate_synthetic_cifar(
    dir: impl AsRef<Path>,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut rng = Rng::stream(seed, 0xDA7A);
    let per_batch = n_train.div_ceil(5).max(1);
    let mut remaining = n_train;
    for i in 1..=5 {
        let n = per_batch.min(remaining);
        remaining -= n;
        write_synthetic_batch(&dir.join(format!("data_batch_{i}.bin")), n.max(1), &mut rng)?;
    }
    write_synthetic_batch(&dir.join("test_batch.bin"), n_test.max(1), &mut rng)?;
    Ok(())
}

fn write_synthetic_batch(path: &Path, n: usize, rng: &mut Rng) -> Result<()> {
    let mut bytes = Vec::with_capacity(n * CIFAR_RECORD);
    for _ in 0..n {
        let class = rng.below(10);
        bytes.push(class as u8);
        render_synthetic_image(class, rng, &mut bytes);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn render_synthetic_image(class: usize, rng: &mut Rng, out: &mut Vec<u8>) {
    // Class palette: hue anchors spread around the color circle.
    let base = [
        (0.9, 0.2, 0.2),
        (0.2, 0.9, 0.2),
        (0.2, 0.2, 0.9),
        (0.9, 0.9, 0.2),
        (0.9, 0.2, 0.9),
        (0.2, 0.9, 0.9),
        (0.8, 0.5, 0.2),
        (0.5, 0.2, 0.8),
        (0.3, 0.6, 0.4),
        (0.6, 0.6, 0.6),
    ][class];
    let n_blobs = 2 + rng.below(2);
    let blobs: Vec<(f64, f64, f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            (
                rng.uniform_in(6.0, 26.0),  // cx
                rng.uniform_in(6.0, 26.0),  // cy
                rng.uniform_in(3.0, 9.0),   // radius
                rng.uniform_in(0.5, 1.0),   // amplitude
                rng.uniform_in(-0.3, 0.3),  // per-channel tint
                rng.uniform_in(-0.3, 0.3),
            )
        })
        .collect();
    let gx = rng.uniform_in(-0.3, 0.3);
    let gy = rng.uniform_in(-0.3, 0.3);
    let bg = rng.uniform_in(0.1, 0.4);
    let mut pixel = [0f64; 3];
    let mut planes = [[0u8; 1024]; 3];
    for y in 0..32 {
        for x in 0..32 {
            let mut blob = 0.0;
            let mut t1 = 0.0;
            let mut t2 = 0.0;
            for &(cx, cy, r, a, tr, tg) in &blobs {
                let d2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (r * r);
                let v = a * (-d2).exp();
                blob += v;
                t1 += v * tr;
                t2 += v * tg;
            }
            let grad = bg + gx * (x as f64 / 31.0 - 0.5) + gy * (y as f64 / 31.0 - 0.5);
            pixel[0] = grad + blob * (base.0 + t1);
            pixel[1] = grad + blob * (base.1 + t2);
            pixel[2] = grad + blob * base.2;
            for c in 0..3 {
                planes[c][y * 32 + x] = (pixel[c].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    for plane in &planes {
        out.extend_from_slice(plane);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_cifar_record(pixels: u8) -> Vec<u8> {
        let mut rec = vec![0u8];
        rec.extend(std::iter::repeat_n(pixels, CIFAR_PIXELS));
        rec
    }

    #[test]
    fn cifar_single_record_all_255() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("test_batch.bin"), write_cifar_record(255)).unwrap();
        let ds = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.images.shape(), &[1, 3, 32, 32]);
        assert!(ds.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cifar_order_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = write_cifar_record(0);
        bytes.extend(write_cifar_record(255));
        std::fs::write(dir.path().join("test_batch.bin"), bytes).unwrap();
        let ds = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images.data()[0], 0.0);
        assert_eq!(ds.images.data()[CIFAR_PIXELS], 1.0);
    }

    #[test]
    fn cifar_truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("test_batch.bin"), vec![0u8; 3072]).unwrap();
        assert!(load_cifar10(dir.path(), Split::Test).is_err());
    }

    #[test]
    fn cifar_missing_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_cifar10(dir.path(), Split::Train).is_err());
    }

    fn make_ppm(w: usize, h: usize, rgb: [u8; 3]) -> Vec<u8> {
        let mut b = format!("P6\n{w} {h}\n255\n").into_bytes();
        for _ in 0..w * h {
            b.extend_from_slice(&rgb);
        }
        b
    }

    #[test]
    fn ppm_parse_and_planar_layout() {
        let b = make_ppm(2, 1, [255, 0, 128]);
        let t = parse_ppm(&b).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data()[0], 1.0); // R plane
        assert_eq!(t.data()[2], 0.0); // G plane
        assert!((t.data()[4] - 128.0 / 255.0).abs() < 1e-6); // B plane
    }

    #[test]
    fn ppm_bad_magic_rejected() {
        assert!(parse_ppm(b"P5\n2 2\n255\n0000").is_err());
        assert!(parse_ppm(b"JUNK").is_err());
    }

    #[test]
    fn ppm_comments_skipped() {
        let mut b = b"P6\n# a comment\n1 1\n255\n".to_vec();
        b.extend_from_slice(&[10, 20, 30]);
        let t = parse_ppm(&b).unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
    }

    #[test]
    fn celeba_constant_image_stays_constant() {
        let img = Tensor::full(&[3, CELEBA_SRC_H, CELEBA_SRC_W], 1.0f32);
        let out = preprocess_celeba(&img).unwrap();
        assert_eq!(out.shape(), &[3, CELEBA_OUT, CELEBA_OUT]);
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn celeba_center_delta_maps_to_center() {
        // Delta at crop center (source row 39+70, col 19+70) should land
        // in the neighborhood of output (32, 32).
        let mut img = Tensor::zeros(&[3, CELEBA_SRC_H, CELEBA_SRC_W]);
        img.data_mut()[(CELEBA_ROW0 + 70) * CELEBA_SRC_W + CELEBA_COL0 + 70] = 1.0;
        let out = preprocess_celeba(&img).unwrap();
        let (mut best, mut best_v) = ((0usize, 0usize), 0.0f32);
        for y in 0..CELEBA_OUT {
            for x in 0..CELEBA_OUT {
                let v = out.data()[y * CELEBA_OUT + x];
                if v > best_v {
                    best_v = v;
                    best = (y, x);
                }
            }
        }
        assert!(best_v > 0.0);
        assert!(best.0.abs_diff(32) <= 1 && best.1.abs_diff(32) <= 1, "{best:?}");
    }

    #[test]
    fn celeba_gradient_monotone() {
        let mut img = Tensor::zeros(&[3, CELEBA_SRC_H, CELEBA_SRC_W]);
        for c in 0..3 {
            for y in 0..CELEBA_SRC_H {
                for x in 0..CELEBA_SRC_W {
                    img.data_mut()[c * CELEBA_SRC_H * CELEBA_SRC_W + y * CELEBA_SRC_W + x] =
                        x as f32 / (CELEBA_SRC_W - 1) as f32;
                }
            }
        }
        let out = preprocess_celeba(&img).unwrap();
        for y in 0..CELEBA_OUT {
            for x in 1..CELEBA_OUT {
                let row = &out.data()[y * CELEBA_OUT..(y + 1) * CELEBA_OUT];
                assert!(row[x] >= row[x - 1] - 1e-6);
            }
        }
    }

    #[test]
    fn celeba_wrong_shape_rejected() {
        let img = Tensor::zeros(&[3, 100, 100]);
        assert!(preprocess_celeba(&img).is_err());
    }

    #[test]
    fn image_folder_sorted_with_limit() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("b.ppm", 200u8), ("a.ppm", 10), ("c.ppm", 250)] {
            std::fs::write(
                dir.path().join(name),
                make_ppm(CELEBA_SRC_W, CELEBA_SRC_H, [v, v, v]),
            )
            .unwrap();
        }
        let ds = load_image_folder(dir.path(), Some(2)).unwrap();
        assert_eq!(ds.len(), 2);
        // a.ppm first (value 10), then b.ppm (200).
        assert!((ds.images.data()[0] - 10.0 / 255.0).abs() < 1e-5);
        let per = 3 * CELEBA_OUT * CELEBA_OUT;
        assert!((ds.images.data()[per] - 200.0 / 255.0).abs() < 1e-5);
    }

    #[test]
    fn synthetic_cifar_loads_in_range() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_cifar(dir.path(), 50, 20, 99).unwrap();
        let train = load_cifar10(dir.path(), Split::Train).unwrap();
        let test = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 20);
        for ds in [&train, &test] {
            assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // Images are not constant.
        let first = &train.images.data()[..3072];
        let (mn, mx) = first
            .iter()
            .fold((1.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(mx - mn > 0.1);
    }

    #[test]
    fn synthetic_cifar_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_synthetic_cifar(d1.path(), 20, 5, 7).unwrap();
        generate_synthetic_cifar(d2.path(), 20, 5, 7).unwrap();
        let a = std::fs::read(d1.path().join("data_batch_1.bin")).unwrap();
        let b = std::fs::read(d2.path().join("data_batch_1.bin")).unwrap();
        assert_eq!(a, b);
    }
}
