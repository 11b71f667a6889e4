//! Image datasets: IDX files, seeded synthetic pattern tasks, and spike
//! encodings over time.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::Dataset;

/// Grayscale images with pixels in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Images {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Images {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..][..n]
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// An unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_UBYTE: u8 = 0x08;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Parses an IDX file: two zero bytes, type code, rank, big-endian `u32`
/// extents, then the raw payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, "bad magic number"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(format_err(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(format_err(3, "rank must be positive"));
    }
    let mut dims = Vec::with_capacity(rank);
    for r in 0..rank {
        let at = 4 + 4 * r;
        let b = bytes
            .get(at..at + 4)
            .ok_or_else(|| format_err(bytes.len(), format!("truncated extent {r}")))?;
        dims.push(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize);
    }
    let start = 4 + 4 * rank;
    let len = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| format_err(4, "extents overflow"))?;
    if len == 0 {
        return Err(format_err(start, "empty payload"));
    }
    let data = bytes
        .get(start..start + len)
        .ok_or_else(|| format_err(bytes.len(), format!("payload needs {len} bytes after offset {start}")))?;
    if bytes.len() != start + len {
        return Err(format_err(start + len, "trailing bytes after payload"));
    }
    Ok(IdxArray {
        dims,
        data: data.to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Result<Vec<u8>> {
    if array.dims.is_empty() || array.dims.len() > 255 {
        return Err(Error::invalid("IDX rank must lie in 1..=255"));
    }
    if array.dims.iter().product::<usize>() != array.data.len() {
        return Err(Error::invalid("IDX extents do not match the payload"));
    }
    let mut out = vec![0, 0, IDX_UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid("IDX extent exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

/// Pairs an `[N, rows, cols]` image array with an `[N]` label array.
pub fn images_from_idx(images: &IdxArray, labels: &IdxArray) -> Result<Images> {
    let [n, rows, cols] = images.dims[..] else {
        return Err(format_err(3, format!("image file must have rank 3, got {}", images.dims.len())));
    };
    if labels.dims != [n] {
        return Err(format_err(3, format!("label file must be [{n}], got {:?}", labels.dims)));
    }
    Ok(Images {
        rows,
        cols,
        pixels: images.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        labels: labels.data.iter().map(|&b| b as usize).collect(),
    })
}

/// Reads an image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Images> {
    images_from_idx(&parse_idx(&std::fs::read(images)?)?, &parse_idx(&std::fs::read(labels)?)?)
}

/// Quantizes `images` to bytes and encodes the image and label files.
pub fn images_to_idx(images: &Images) -> Result<(Vec<u8>, Vec<u8>)> {
    let pix = IdxArray {
        dims: vec![images.len(), images.rows, images.cols],
        data: images.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    };
    let labels = images
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::invalid("labels above 255 do not fit IDX bytes")))
        .collect::<Result<Vec<u8>>>()?;
    let lab = IdxArray {
        dims: vec![images.len()],
        data: labels,
    };
    Ok((encode_idx(&pix)?, encode_idx(&lab)?))
}

/// How a static image becomes an input sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// The same frame at every step.
    #[default]
    Repeat,
    /// Independent Bernoulli spikes with the pixel value as probability.
    Rate,
}

/// A dataset over `T` steps together with the encoding that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub data: Dataset,
    pub encoding: Encoding,
    pub time_steps: usize,
}

/// Turns every image into a `[T, 1, rows, cols]` sample.
pub fn encode(images: &Images, time_steps: usize, mode: Encoding, seed: u64) -> Result<EncodedDataset> {
    if time_steps == 0 {
        return Err(Error::invalid("time_steps must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = images.rows * images.cols;
    let samples = (0..images.len())
        .map(|i| {
            let img = images.image(i);
            Tensor::from_fn(&[time_steps, 1, images.rows, images.cols], |k| {
                let p = img[k % n];
                match mode {
                    Encoding::Repeat => p,
                    Encoding::Rate => f64::from(u8::from(rng.gen::<f64>() < p)),
                }
            })
        })
        .collect();
    Ok(EncodedDataset {
        data: Dataset::new(samples, images.labels.clone(), images.classes().max(1))?,
        encoding: mode,
        time_steps,
    })
}

/// How far the second synthetic task is from the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// Same pattern family, different classes.
    #[default]
    Near,
    /// A disjoint pattern family.
    Far,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Side of the square images.
    pub size: usize,
    /// Largest uniform pixel noise added before clipping.
    pub noise: f64,
    /// Largest random shift of a pattern, in pixels.
    pub jitter: usize,
    pub relation: Relation,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            train_per_class: 500,
            test_per_class: 100,
            size: 8,
            noise: 0.3,
            jitter: 1,
            relation: Relation::Near,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > 4 {
            return Err(Error::invalid("synthetic tasks support 1 to 4 classes"));
        }
        if self.size < 4 {
            return Err(Error::invalid("synthetic images need a side of at least 4"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::invalid("every class needs training and test samples"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::invalid("noise must lie in [0, 1]"));
        }
        if self.jitter >= self.size / 2 {
            return Err(Error::invalid("jitter must stay below half the image side"));
        }
        Ok(())
    }
}

/// Train and test images of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskImages {
    pub train: Images,
    pub test: Images,
}

/// Pattern `class` of a family on an `s`x`s` grid: 1 where the pattern is lit.
///
/// Family 0 draws one thin stroke per class through the centre (horizontal,
/// vertical, diagonal, anti-diagonal). Family 1 is the same family with the
/// classes shifted by one, so the two tasks share most of their patterns.
/// Family 2 is unrelated: dense checkerboards of class-specific period on a
/// lit background.
fn template(family: usize, class: usize, s: usize) -> Vec<f64> {
    let mid = s / 2;
    let mut img = vec![0.0; s * s];
    match family {
        0 | 1 => {
            let kind = if family == 0 { class } else { (class + 1) % 4 };
            for i in 0..s {
                let (r, c) = match kind {
                    0 => (mid, i),
                    1 => (i, mid),
                    2 => (i, i),
                    _ => (i, s - 1 - i),
                };
                img[r * s + c] = 1.0;
            }
        }
        _ => {
            let period = class + 1;
            for r in 0..s {
                for c in 0..s {
                    let on = ((r / period) + (c / period)) % 2 == 0;
                    img[r * s + c] = if on { 1.0 } else { 0.6 };
                }
            }
        }
    }
    img
}

/// Shifted, intensity-scaled and noisy copies of the family templates,
/// exactly `per_class` per class, classes interleaved.
fn sample_images(family: usize, spec: &SynthSpec, per_class: usize, rng: &mut ChaCha8Rng) -> Images {
    let s = spec.size;
    let templates: Vec<Vec<f64>> = (0..spec.classes).map(|c| template(family, c, s)).collect();
    let j = spec.jitter as i64;
    let mut pixels = Vec::with_capacity(per_class * spec.classes * s * s);
    let mut labels = Vec::with_capacity(per_class * spec.classes);
    for _ in 0..per_class {
        for (class, t) in templates.iter().enumerate() {
            let (dr, dc) = (rng.gen_range(-j..=j), rng.gen_range(-j..=j));
            let gain = rng.gen_range(0.7..=1.0);
            for r in 0..s as i64 {
                for c in 0..s as i64 {
                    let (sr, sc) = (r - dr, c - dc);
                    let base = if (0..s as i64).contains(&sr) && (0..s as i64).contains(&sc) {
                        t[sr as usize * s + sc as usize]
                    } else {
                        0.0
                    };
                    let noise = if spec.noise > 0.0 { rng.gen_range(0.0..spec.noise) } else { 0.0 };
                    pixels.push((gain * base + noise).clamp(0.0, 1.0));
                }
            }
            labels.push(class);
        }
    }
    Images {
        rows: s,
        cols: s,
        pixels,
        labels,
    }
}

/// Two seeded classification tasks: task A from the stroke family, task B
/// either from the class-shifted stroke family (near) or from checkerboards
/// (far).
pub fn synth_tasks(spec: &SynthSpec, seed: u64) -> Result<(TaskImages, TaskImages)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut task = |family| TaskImages {
        train: sample_images(family, spec, spec.train_per_class, &mut rng),
        test: sample_images(family, spec, spec.test_per_class, &mut rng),
    };
    let a = task(0);
    let b = task(match spec.relation {
        Relation::Near => 1,
        Relation::Far => 2,
    });
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Writes an IDX file byte by byte, independently of `encode_idx`.
    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0x00, 0x00, 0x08, 0x03];
        for d in [4u32, 2, 3] {
            img.extend_from_slice(&d.to_be_bytes());
        }
        // image k has pixels k*10 .. k*10+5
        for k in 0..4u8 {
            for p in 0..6u8 {
                img.push(k * 10 + p);
            }
        }
        let mut lab = vec![0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x04];
        lab.extend_from_slice(&[3, 1, 4, 1]);
        (img, lab)
    }

    #[test]
    fn canonical_fixture_decodes_exactly() {
        let (img, lab) = fixture();
        let images = images_from_idx(&parse_idx(&img).unwrap(), &parse_idx(&lab).unwrap()).unwrap();
        assert_eq!((images.len(), images.rows, images.cols), (4, 2, 3));
        assert_eq!(images.labels, vec![3, 1, 4, 1]);
        for k in 0..4 {
            let raw: u32 = (0..6).map(|p| 10 * k + p).sum();
            let sum: f64 = images.image(k as usize).iter().sum();
            assert_eq!(sum, (0..6).map(|p| f64::from(10 * k + p) / 255.0).sum::<f64>());
            assert!((sum * 255.0 - f64::from(raw)).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (img, lab) = fixture();
        let a = parse_idx(&img).unwrap();
        assert_eq!(encode_idx(&a).unwrap(), img);
        let images = images_from_idx(&a, &parse_idx(&lab).unwrap()).unwrap();
        let (img2, lab2) = images_to_idx(&images).unwrap();
        assert_eq!((img2, lab2), (img, lab));
    }

    #[test]
    fn malformed_files_report_offsets() {
        let (img, _) = fixture();
        let offset = |b: &[u8]| match parse_idx(b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected a format error, got {other:?}"),
        };
        assert_eq!(offset(&[0, 1, 8, 1]), 0);
        assert_eq!(offset(&[0, 0, 0x0d, 1]), 2);
        assert_eq!(offset(&img[..2]), 2);
        assert_eq!(offset(&img[..9]), 9);
        assert_eq!(offset(&img[..img.len() - 1]), img.len() - 1);
        let mut long = img.clone();
        long.push(0);
        assert_eq!(offset(&long), img.len());
        // zero images: an empty payload
        let empty = [0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 2];
        assert_eq!(offset(&empty), 16);
    }

    #[test]
    fn rank_and_count_mismatches_are_rejected() {
        let (img, lab) = fixture();
        let a = parse_idx(&img).unwrap();
        let l = parse_idx(&lab).unwrap();
        assert!(images_from_idx(&l, &l).is_err());
        let short = IdxArray {
            dims: vec![3],
            data: vec![0, 1, 2],
        };
        assert!(images_from_idx(&a, &short).is_err());
    }

    fn flat(value: f64, n: usize) -> Images {
        Images {
            rows: 1,
            cols: n,
            pixels: vec![value; n],
            labels: vec![0],
        }
    }

    #[test]
    fn rate_encoding_extremes() {
        let on = encode(&flat(1.0, 5), 20, Encoding::Rate, 0).unwrap();
        assert!(on.data.samples()[0].data().iter().all(|&v| v == 1.0));
        let off = encode(&flat(0.0, 5), 20, Encoding::Rate, 0).unwrap();
        assert!(off.data.samples()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rate_encoding_matches_binomial_bounds() {
        let t = 1000;
        for p in [0.1, 0.37, 0.5, 0.9] {
            let e = encode(&flat(p, 4), t, Encoding::Rate, 7).unwrap();
            let s = &e.data.samples()[0];
            assert!(s.is_binary());
            for pixel in 0..4 {
                let fired: f64 = (0..t).map(|k| s.data()[k * 4 + pixel]).sum();
                let sd = (t as f64 * p * (1.0 - p)).sqrt();
                assert!((fired - t as f64 * p).abs() <= 3.0 * sd, "p={p} fired={fired}");
            }
        }
    }

    #[test]
    fn repeat_encoding_copies_frames() {
        let (img, lab) = fixture();
        let images = images_from_idx(&parse_idx(&img).unwrap(), &parse_idx(&lab).unwrap()).unwrap();
        let e = encode(&images, 3, Encoding::Repeat, 0).unwrap();
        for (i, s) in e.data.samples().iter().enumerate() {
            assert_eq!(s.shape(), &[3, 1, 2, 3]);
            for t in 0..3 {
                assert_eq!(&s.data()[t * 6..][..6], images.image(i));
            }
        }
        assert!(encode(&images, 0, Encoding::Repeat, 0).is_err());
    }

    #[test]
    fn synthetic_tasks_are_seeded_and_balanced() {
        for relation in [Relation::Near, Relation::Far] {
            let spec = SynthSpec {
                train_per_class: 20,
                test_per_class: 5,
                relation,
                ..SynthSpec::default()
            };
            let (a, b) = synth_tasks(&spec, 3).unwrap();
            assert_eq!(synth_tasks(&spec, 3).unwrap(), (a.clone(), b.clone()));
            assert_ne!(synth_tasks(&spec, 4).unwrap().0, a);
            for t in [&a, &b] {
                for c in 0..3 {
                    assert_eq!(t.train.labels.iter().filter(|&&l| l == c).count(), 20);
                    assert_eq!(t.test.labels.iter().filter(|&&l| l == c).count(), 5);
                }
                assert!(t.train.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
        assert!(synth_tasks(&SynthSpec { classes: 5, ..SynthSpec::default() }, 0).is_err());
    }

    #[test]
    fn families_differ() {
        let s = 8;
        for c in 0..4 {
            assert_ne!(template(0, c, s), template(1, c, s));
            assert_eq!(template(1, c, s), template(0, (c + 1) % 4, s));
            for d in 0..c {
                assert_ne!(template(0, c, s), template(0, d, s));
                assert_ne!(template(1, c, s), template(1, d, s));
                assert_ne!(template(2, c, s), template(2, d, s));
            }
        }
        // stroke families light one line, checkerboards light everything
        let lit = |f| template(f, 0, s).iter().filter(|&&p| p > 0.0).count();
        assert_eq!((lit(0), lit(1), lit(2)), (s, s, s * s));
    }
}
