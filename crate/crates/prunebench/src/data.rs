//! Dataset loading: CIFAR binary format and a deterministic synthetic
//! generator, with per-channel normalization and CIFAR-style augmentation.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// One split: images stored CHW per sample, already normalized.
#[derive(Clone, Debug)]
pub struct Split {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_elems(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Gathers the given sample indices into one batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let elems = self.sample_elems();
        let mut data = Vec::with_capacity(indices.len() * elems);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images[i * elems..(i + 1) * elems]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(
                vec![indices.len(), self.channels, self.height, self.width],
                data,
            ),
            labels,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub num_classes: usize,
    /// The spec string this dataset was loaded from.
    pub spec: String,
}

/// Loads a dataset from a spec string:
/// `cifar10:<dir>` for the CIFAR-10 binary directory, or
/// `synthetic:classes=C,train=N,test=M,size=S,seed=K`.
pub fn load(spec: &str) -> Result<Dataset> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::Dataset(format!("malformed dataset spec `{spec}`")))?;
    let mut ds = match kind {
        "cifar10" => load_cifar10(Path::new(rest))?,
        "synthetic" => synthetic(rest)?,
        other => return Err(Error::Dataset(format!("unknown dataset kind `{other}`"))),
    };
    ds.spec = spec.to_string();
    normalize(&mut ds);
    Ok(ds)
}

fn load_cifar_file(path: &Path, split: &mut Split) -> Result<()> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::MalformedRecord {
            offset: ((bytes.len() / CIFAR_RECORD) * CIFAR_RECORD) as u64,
            detail: format!(
                "{}: trailing {} bytes are not a whole {CIFAR_RECORD}-byte record",
                path.display(),
                bytes.len() % CIFAR_RECORD
            ),
        });
    }
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        split.labels.push(rec[0] as usize);
        split
            .images
            .extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(())
}

fn empty_split(c: usize, h: usize, w: usize) -> Split {
    Split {
        images: Vec::new(),
        labels: Vec::new(),
        channels: c,
        height: h,
        width: w,
    }
}

fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let mut train = empty_split(3, 32, 32);
    for i in 1..=5 {
        load_cifar_file(&dir.join(format!("data_batch_{i}.bin")), &mut train)?;
    }
    let mut test = empty_split(3, 32, 32);
    load_cifar_file(&dir.join("test_batch.bin"), &mut test)?;
    Ok(Dataset {
        train,
        test,
        num_classes: 10,
        spec: String::new(),
    })
}

fn parse_kv(rest: &str) -> Result<std::collections::BTreeMap<String, u64>> {
    let mut map = std::collections::BTreeMap::new();
    for pair in rest.split(',') {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Dataset(format!("malformed synthetic spec item `{pair}`")))?;
        let v: u64 = v
            .parse()
            .map_err(|_| Error::Dataset(format!("non-integer value in `{pair}`")))?;
        map.insert(k.trim().to_string(), v);
    }
    Ok(map)
}

/// Deterministic synthetic classification set: each class has a random
/// prototype image; samples are noisy, randomly shifted copies. The signal
/// is weak enough that training quality (not memorization) decides accuracy.
fn synthetic(rest: &str) -> Result<Dataset> {
    let kv = parse_kv(rest)?;
    let get = |k: &str, default: u64| kv.get(k).copied().unwrap_or(default);
    let classes = get("classes", 10) as usize;
    let n_train = get("train", 800) as usize;
    let n_test = get("test", 400) as usize;
    let size = get("size", 12) as usize;
    let seed = get("seed", 0);
    if classes < 2 || size < 4 {
        return Err(Error::Dataset("need classes >= 2 and size >= 4".into()));
    }
    let c = 3usize;
    let elems = c * size * size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..elems).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let gen_split = |n: usize, rng: &mut ChaCha8Rng| -> Split {
        let mut split = empty_split(c, size, size);
        for i in 0..n {
            let label = i % classes;
            split.labels.push(label);
            let shift_y = rng.gen_range(-2i64..=2);
            let shift_x = rng.gen_range(-2i64..=2);
            let proto = &prototypes[label];
            for ch in 0..c {
                for y in 0..size {
                    for x in 0..size {
                        let sy = y as i64 + shift_y;
                        let sx = x as i64 + shift_x;
                        let base = if (0..size as i64).contains(&sy)
                            && (0..size as i64).contains(&sx)
                        {
                            proto[(ch * size + sy as usize) * size + sx as usize]
                        } else {
                            0.0
                        };
                        let noise: f32 = rng.gen_range(-1.0..1.0);
                        split.images.push(0.6 * base + 0.8 * noise);
                    }
                }
            }
        }
        split
    };
    let train = gen_split(n_train, &mut rng);
    let test = gen_split(n_test, &mut rng);
    Ok(Dataset {
        train,
        test,
        num_classes: classes,
        spec: String::new(),
    })
}

/// Per-channel mean/std normalization, statistics from the train split.
fn normalize(ds: &mut Dataset) {
    let c = ds.train.channels;
    let per = ds.train.height * ds.train.width;
    let mut mean = vec![0f64; c];
    let mut var = vec![0f64; c];
    let n = ds.train.len();
    if n == 0 {
        return;
    }
    let elems = c * per;
    for i in 0..n {
        let img = &ds.train.images[i * elems..(i + 1) * elems];
        for ch in 0..c {
            for &v in &img[ch * per..(ch + 1) * per] {
                mean[ch] += v as f64;
            }
        }
    }
    let count = (n * per) as f64;
    for m in mean.iter_mut() {
        *m /= count;
    }
    for i in 0..n {
        let img = &ds.train.images[i * elems..(i + 1) * elems];
        for ch in 0..c {
            for &v in &img[ch * per..(ch + 1) * per] {
                var[ch] += (v as f64 - mean[ch]).powi(2);
            }
        }
    }
    for v in var.iter_mut() {
        *v = (*v / count).sqrt().max(1e-8);
    }
    for split in [&mut ds.train, &mut ds.test] {
        let sn = split.len();
        for i in 0..sn {
            let img = &mut split.images[i * elems..(i + 1) * elems];
            for ch in 0..c {
                for v in &mut img[ch * per..(ch + 1) * per] {
                    *v = ((*v as f64 - mean[ch]) / var[ch]) as f32;
                }
            }
        }
    }
}

/// Train-time augmentation: pad-4 random crop plus horizontal flip.
/// Mutates the batch in place; eval batches are never augmented.
pub fn augment(batch: &mut Tensor, pad: usize, rng: &mut ChaCha8Rng) {
    let (b, c, h, w) = (
        batch.shape()[0],
        batch.shape()[1],
        batch.shape()[2],
        batch.shape()[3],
    );
    let elems = c * h * w;
    let mut padded = vec![0f32; c * (h + 2 * pad) * (w + 2 * pad)];
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    for i in 0..b {
        let img = &batch.data()[i * elems..(i + 1) * elems];
        padded.fill(0.0);
        for ch in 0..c {
            for y in 0..h {
                let src = (ch * h + y) * w;
                let dst = (ch * ph + y + pad) * pw + pad;
                padded[dst..dst + w].copy_from_slice(&img[src..src + w]);
            }
        }
        let oy = rng.gen_range(0..=2 * pad);
        let ox = rng.gen_range(0..=2 * pad);
        let flip = rng.gen_bool(0.5);
        let out = &mut batch.data_mut()[i * elems..(i + 1) * elems];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sx = if flip { ox + (w - 1 - x) } else { ox + x };
                    out[(ch * h + y) * w + x] = padded[(ch * ph + oy + y) * pw + sx];
                }
            }
        }
    }
}
