//! Procedural multi-domain segmentation data.
//!
//! Scenes are layered geometric regions (rectangles, ellipses, stripe bands)
//! over a background class, rendered per domain style and written as binary
//! PPM/PGM pairs with a tab-separated manifest. Augmentation applies color
//! jitter and Gaussian blur only, so label maps stay valid for the augmented
//! view. Everything is deterministic from (config, master seed); per-sample
//! RNG streams are derived by hashing (master seed, domain id, index) so
//! generation order does not matter.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{CdpclError, Result};
use crate::numerics::Tensor;

/// Rendering parameters of one domain. `palette` holds one base RGB color
/// per class, channels in [0,1].
#[derive(Debug, Clone)]
pub struct DomainStyle {
    pub id: String,
    pub palette: Vec<[f64; 3]>,
    /// multiplicative brightness offset, applied as `* (1 + b)`
    pub brightness: f64,
    /// contrast offset, blend factor `1 + c` around mid-gray
    pub contrast: f64,
    /// saturation offset, blend factor `1 + s` from per-pixel gray
    pub saturation: f64,
    pub noise_sigma: f64,
    /// spatial frequency of the multiplicative texture wave; 0 disables
    pub texture_frequency: f64,
    pub seed: u64,
}

impl DomainStyle {
    /// Number of rendering parameters that differ from `other` (palette
    /// counts as one).
    pub fn difference_count(&self, other: &DomainStyle) -> usize {
        let mut n = 0;
        if self.palette != other.palette {
            n += 1;
        }
        if self.brightness != other.brightness {
            n += 1;
        }
        if self.contrast != other.contrast {
            n += 1;
        }
        if self.saturation != other.saturation {
            n += 1;
        }
        if self.noise_sigma != other.noise_sigma {
            n += 1;
        }
        if self.texture_frequency != other.texture_frequency {
            n += 1;
        }
        n
    }
}

/// One rendered scene: image `3 x H x W` in [0,1] and an exact label map.
#[derive(Debug, Clone)]
pub struct DomainSample {
    pub image: Tensor,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub domain: String,
    pub seed: u64,
}

/// A split held in memory: shared geometry plus the samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<DomainSample>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Order-independent per-sample seed from (master seed, domain id, index).
pub fn sample_seed(master_seed: u64, domain: &str, index: u64) -> u64 {
    mix64(master_seed ^ mix64(fnv1a64(domain.as_bytes())) ^ mix64(index))
}

const GRAY_R: f64 = 0.299;
const GRAY_G: f64 = 0.587;
const GRAY_B: f64 = 0.114;

fn gray(r: f64, g: f64, b: f64) -> f64 {
    GRAY_R * r + GRAY_G * g + GRAY_B * b
}

enum Region {
    Rect { x0: usize, y0: usize, x1: usize, y1: usize },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Stripes { x0: usize, y0: usize, x1: usize, y1: usize, period: usize, horizontal: bool },
}

impl Region {
    fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Region::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Region::Ellipse { cx, cy, rx, ry } => {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Region::Stripes { x0, y0, x1, y1, period, horizontal } => {
                if x < x0 || x >= x1 || y < y0 || y >= y1 {
                    return false;
                }
                let t = if horizontal { y - y0 } else { x - x0 };
                (t / period) % 2 == 0
            }
        }
    }
}

fn random_region(rng: &mut ChaCha8Rng, h: usize, w: usize, min_frac: f64) -> Region {
    let rh = rng.gen_range((h as f64 * min_frac) as usize..=h / 2).max(2);
    let rw = rng.gen_range((w as f64 * min_frac) as usize..=w / 2).max(2);
    let y0 = rng.gen_range(0..=h - rh);
    let x0 = rng.gen_range(0..=w - rw);
    match rng.gen_range(0..3) {
        0 => Region::Rect { x0, y0, x1: x0 + rw, y1: y0 + rh },
        1 => Region::Ellipse {
            cx: x0 as f64 + rw as f64 / 2.0,
            cy: y0 as f64 + rh as f64 / 2.0,
            rx: rw as f64 / 2.0,
            ry: rh as f64 / 2.0,
        },
        _ => Region::Stripes {
            x0,
            y0,
            x1: x0 + rw,
            y1: y0 + rh,
            period: rng.gen_range(2..=4),
            horizontal: rng.gen_bool(0.5),
        },
    }
}

/// Render one scene: background class 0, then 2 to 5 regions painted over
/// it in order. The topmost region's class is forced from the seed so that
/// every class keeps a stable pixel share across a split.
pub fn generate_scene(
    style: &DomainStyle,
    height: usize,
    width: usize,
    scene_seed: u64,
) -> Result<DomainSample> {
    let classes = style.palette.len();
    if classes < 2 {
        return Err(CdpclError::Contract {
            op: "generate_scene",
            detail: format!("need at least 2 classes, palette has {classes}"),
        });
    }
    if height < 32 || width < 32 {
        return Err(CdpclError::Contract {
            op: "generate_scene",
            detail: format!("minimum size is 32x32, got {height}x{width}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(scene_seed ^ mix64(style.seed)));

    let mut labels = vec![0u8; height * width];
    let n_regions = rng.gen_range(2..=5);
    let forced_class = (mix64(scene_seed) % (classes as u64 - 1) + 1) as u8;
    for j in 0..n_regions {
        let last = j + 1 == n_regions;
        let min_frac = if last { 0.33 } else { 0.25 };
        let region = random_region(&mut rng, height, width, min_frac);
        let class = if last {
            forced_class
        } else {
            rng.gen_range(1..classes) as u8
        };
        for y in 0..height {
            for x in 0..width {
                if region.contains(x, y) {
                    labels[y * width + x] = class;
                }
            }
        }
    }

    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, style.noise_sigma.max(0.0)).map_err(|e| {
        CdpclError::Contract { op: "generate_scene", detail: e.to_string() }
    })?;
    let mut image = Tensor::zeros(&[3, height, width]);
    let plane = height * width;
    let freq = style.texture_frequency;
    {
        let id = image.data_mut();
        for y in 0..height {
            for x in 0..width {
                let pix = y * width + x;
                let base = style.palette[labels[pix] as usize];
                let tex = 1.0
                    + 0.15
                        * (std::f64::consts::TAU * freq * (x + y) as f64 / width as f64 + phase)
                            .sin();
                let mut rgb = [base[0] * tex, base[1] * tex, base[2] * tex];
                for v in &mut rgb {
                    *v *= 1.0 + style.brightness;
                }
                let fc = 1.0 + style.contrast;
                for v in &mut rgb {
                    *v = *v * fc + 0.5 * (1.0 - fc);
                }
                let g = gray(rgb[0], rgb[1], rgb[2]);
                let fs = 1.0 + style.saturation;
                for v in &mut rgb {
                    *v = *v * fs + g * (1.0 - fs);
                }
                for (ci, v) in rgb.iter().enumerate() {
                    let n = if style.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    id[ci * plane + pix] = (v + n).clamp(0.0, 1.0);
                }
            }
        }
    }

    Ok(DomainSample {
        image,
        labels,
        height,
        width,
        domain: style.id.clone(),
        seed: scene_seed,
    })
}

/// Jitter magnitudes and blur settings for the augmentation branch.
#[derive(Debug, Clone)]
pub struct AugParams {
    /// brightness factor drawn in `[1 - b, 1 + b]`
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// hue shift drawn in `[-h, h]`, in fractional turns
    pub hue: f64,
    pub blur: bool,
    pub blur_sigma: (f64, f64),
}

impl Default for AugParams {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            blur: true,
            blur_sigma: (0.1, 2.0),
        }
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let d = mx - mn;
    let h = if d == 0.0 {
        0.0
    } else if mx == r {
        (((g - b) / d).rem_euclid(6.0)) / 6.0
    } else if mx == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if mx == 0.0 { 0.0 } else { d / mx };
    (h, s, mx)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = (h6.floor() as usize) % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn gaussian_blur(image: &mut Tensor, sigma: f64) {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let plane = h * w;
    let data = image.data_mut();
    let mut tmp = vec![0.0; plane];
    for c in 0..3 {
        let ch = &mut data[c * plane..(c + 1) * plane];
        // horizontal pass with clamped borders
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * ch[y * w + sx];
                }
                tmp[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[sy * w + x];
                }
                ch[y * w + x] = acc;
            }
        }
    }
}

/// Color jitter (brightness, contrast, saturation, hue, in that fixed order)
/// followed by Gaussian blur. Geometry is untouched, so the label map of the
/// input remains valid. With all magnitudes zero and blur off this is the
/// identity, bit for bit.
pub fn augment(image: &Tensor, params: &AugParams, aug_seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(aug_seed));
    let draw = |rng: &mut ChaCha8Rng, mag: f64| -> f64 {
        if mag > 0.0 {
            rng.gen_range(1.0 - mag..=1.0 + mag)
        } else {
            1.0
        }
    };
    let fb = draw(&mut rng, params.brightness);
    let fc = draw(&mut rng, params.contrast);
    let fs = draw(&mut rng, params.saturation);
    let hue = if params.hue > 0.0 { rng.gen_range(-params.hue..=params.hue) } else { 0.0 };

    let mut out = image.clone();
    let (h, w) = (out.shape()[1], out.shape()[2]);
    let plane = h * w;
    {
        let d = out.data_mut();
        for v in d.iter_mut() {
            *v *= fb;
        }
        // contrast blends toward the mean gray of the jittered image
        let mut mean = 0.0;
        for pix in 0..plane {
            mean += gray(d[pix], d[plane + pix], d[2 * plane + pix]);
        }
        mean /= plane as f64;
        for v in d.iter_mut() {
            *v = *v * fc + mean * (1.0 - fc);
        }
        for pix in 0..plane {
            let g = gray(d[pix], d[plane + pix], d[2 * plane + pix]);
            for c in 0..3 {
                let v = &mut d[c * plane + pix];
                *v = *v * fs + g * (1.0 - fs);
            }
        }
        if hue != 0.0 {
            for pix in 0..plane {
                let (hh, ss, vv) = rgb_to_hsv(
                    d[pix].clamp(0.0, 1.0),
                    d[plane + pix].clamp(0.0, 1.0),
                    d[2 * plane + pix].clamp(0.0, 1.0),
                );
                let (r, g, b) = hsv_to_rgb(hh + hue, ss, vv);
                d[pix] = r;
                d[plane + pix] = g;
                d[2 * plane + pix] = b;
            }
        }
        for v in d.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    if params.blur {
        let (lo, hi) = params.blur_sigma;
        let sigma = rng.gen_range(lo..=hi);
        gaussian_blur(&mut out, sigma);
    }
    out
}

// ---------------------------------------------------------------------------
// PPM / PGM codecs

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for pix in 0..plane {
        bytes.push(quantize(d[pix]));
        bytes.push(quantize(d[plane + pix]));
        bytes.push(quantize(d[2 * plane + pix]));
    }
    fs::write(path, bytes).map_err(|e| CdpclError::Io { path: path.into(), source: e })
}

fn write_pgm(path: &Path, labels: &[u8], h: usize, w: usize) -> Result<()> {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(|e| CdpclError::Io { path: path.into(), source: e })
}

struct NetpbmHeader {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn format_err(path: &Path, offset: usize, detail: &str) -> CdpclError {
    CdpclError::Format {
        path: path.into(),
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn parse_netpbm_header(path: &Path, bytes: &[u8], magic: &[u8]) -> Result<NetpbmHeader> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            path,
            0,
            &format!("expected magic {:?}", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in &mut fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(format_err(path, start, "expected decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| format_err(path, start, "header field out of range"))?;
    }
    if fields[2] != 255 {
        return Err(format_err(path, pos, "maxval must be 255"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, pos, "expected whitespace after maxval"));
    }
    Ok(NetpbmHeader {
        width: fields[0],
        height: fields[1],
        data_offset: pos + 1,
    })
}

fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| CdpclError::Io { path: path.into(), source: e })?;
    let hd = parse_netpbm_header(path, &bytes, b"P6")?;
    let plane = hd.width * hd.height;
    let need = hd.data_offset + 3 * plane;
    if bytes.len() < need {
        return Err(format_err(path, bytes.len(), "pixel data truncated"));
    }
    let mut image = Tensor::zeros(&[3, hd.height, hd.width]);
    let d = image.data_mut();
    for pix in 0..plane {
        for c in 0..3 {
            d[c * plane + pix] = bytes[hd.data_offset + 3 * pix + c] as f64 / 255.0;
        }
    }
    Ok(image)
}

fn read_pgm(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| CdpclError::Io { path: path.into(), source: e })?;
    let hd = parse_netpbm_header(path, &bytes, b"P5")?;
    let plane = hd.width * hd.height;
    if bytes.len() < hd.data_offset + plane {
        return Err(format_err(path, bytes.len(), "pixel data truncated"));
    }
    Ok((
        bytes[hd.data_offset..hd.data_offset + plane].to_vec(),
        hd.height,
        hd.width,
    ))
}

// ---------------------------------------------------------------------------
// dataset IO

const MANIFEST: &str = "manifest.tsv";

/// Write all samples plus a manifest. Records are one line each,
/// tab-separated: image path, label path, domain, seed. Header comment
/// lines carry the split geometry.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CdpclError::Io { path: dir.into(), source: e })?;
    let mpath = dir.join(MANIFEST);
    let mut manifest = String::new();
    manifest.push_str(&format!(
        "# classes={} height={} width={}\n",
        ds.classes, ds.height, ds.width
    ));
    for (i, s) in ds.samples.iter().enumerate() {
        let image_name = format!("{}_{:05}.ppm", s.domain, i);
        let label_name = format!("{}_{:05}.pgm", s.domain, i);
        write_ppm(&dir.join(&image_name), &s.image)?;
        write_pgm(&dir.join(&label_name), &s.labels, s.height, s.width)?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            image_name, label_name, s.domain, s.seed
        ));
    }
    let mut f = fs::File::create(&mpath).map_err(|e| CdpclError::Io { path: mpath.clone(), source: e })?;
    f.write_all(manifest.as_bytes())
        .map_err(|e| CdpclError::Io { path: mpath, source: e })
}

/// Read a split back from its manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| CdpclError::Io { path: mpath.clone(), source: e })?;
    let mut classes = None;
    let mut height = None;
    let mut width = None;
    let mut samples = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for kv in rest.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    let v: usize = v.parse().map_err(|_| {
                        CdpclError::Data(format!("{}: bad header value on line {}", mpath.display(), ln + 1))
                    })?;
                    match k {
                        "classes" => classes = Some(v),
                        "height" => height = Some(v),
                        "width" => width = Some(v),
                        _ => {}
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CdpclError::Data(format!(
                "{}: line {} has {} fields, expected 4",
                mpath.display(),
                ln + 1,
                fields.len()
            )));
        }
        let image = read_ppm(&dir.join(fields[0]))?;
        let (labels, h, w) = read_pgm(&dir.join(fields[1]))?;
        if image.shape()[1] != h || image.shape()[2] != w {
            return Err(CdpclError::Data(format!(
                "{}: image/label size mismatch on line {}",
                mpath.display(),
                ln + 1
            )));
        }
        let seed: u64 = fields[3].parse().map_err(|_| {
            CdpclError::Data(format!("{}: bad seed on line {}", mpath.display(), ln + 1))
        })?;
        samples.push(DomainSample {
            image,
            labels,
            height: h,
            width: w,
            domain: fields[2].to_string(),
            seed,
        });
    }
    let (classes, height, width) = match (classes, height, width) {
        (Some(c), Some(h), Some(w)) => (c, h, w),
        _ => {
            return Err(CdpclError::Data(format!(
                "{}: missing classes/height/width header",
                mpath.display()
            )))
        }
    };
    Ok(Dataset { classes, height, width, samples })
}

// ---------------------------------------------------------------------------
// split generation

/// Configuration for one generated corpus: a source training split plus
/// evaluation splits for every unseen style.
#[derive(Debug, Clone)]
pub struct SplitConfig {
    pub out_dir: PathBuf,
    pub height: usize,
    pub width: usize,
    pub train_count: usize,
    pub eval_count: usize,
    pub master_seed: u64,
    pub source: DomainStyle,
    pub unseen: Vec<DomainStyle>,
}

fn palette(classes: usize, hue_shift: f64, sat: f64, val: f64) -> Vec<[f64; 3]> {
    (0..classes)
        .map(|c| {
            let (r, g, b) = hsv_to_rgb(c as f64 / classes as f64 + hue_shift, sat, val);
            [r, g, b]
        })
        .collect()
}

impl SplitConfig {
    /// Desk-scale default: 6 classes, 64x64, 200 train / 50 eval per domain,
    /// three unseen styles each differing from the source in several
    /// rendering parameters.
    pub fn default_desk(out_dir: PathBuf, classes: usize, master_seed: u64) -> Self {
        let source = DomainStyle {
            id: "src".into(),
            palette: palette(classes, 0.0, 0.75, 0.8),
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            noise_sigma: 0.02,
            texture_frequency: 2.0,
            seed: 11,
        };
        let unseen = vec![
            DomainStyle {
                id: "unseen_a".into(),
                palette: palette(classes, 0.06, 0.55, 0.55),
                brightness: -0.25,
                contrast: -0.15,
                saturation: -0.2,
                noise_sigma: 0.05,
                texture_frequency: 2.0,
                seed: 12,
            },
            DomainStyle {
                id: "unseen_b".into(),
                palette: palette(classes, -0.05, 0.9, 0.95),
                brightness: 0.2,
                contrast: 0.25,
                saturation: 0.25,
                noise_sigma: 0.02,
                texture_frequency: 5.0,
                seed: 13,
            },
            DomainStyle {
                id: "unseen_c".into(),
                palette: palette(classes, 0.1, 0.65, 0.75),
                brightness: 0.1,
                contrast: -0.2,
                saturation: 0.3,
                noise_sigma: 0.08,
                texture_frequency: 0.5,
                seed: 14,
            },
        ];
        Self {
            out_dir,
            height: 64,
            width: 64,
            train_count: 200,
            eval_count: 50,
            master_seed,
            source,
            unseen,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.unseen.len() < 2 {
            return Err(CdpclError::Config(format!(
                "need at least 2 unseen domains, got {}",
                self.unseen.len()
            )));
        }
        let c = self.source.palette.len();
        for u in &self.unseen {
            if u.palette.len() != c {
                return Err(CdpclError::Config(format!(
                    "domain {} palette size {} != source {}",
                    u.id,
                    u.palette.len(),
                    c
                )));
            }
            let d = u.difference_count(&self.source);
            if d < 2 {
                return Err(CdpclError::Config(format!(
                    "domain {} differs from source in {} parameters, need at least 2",
                    u.id, d
                )));
            }
        }
        Ok(())
    }
}

fn generate_split(
    style: &DomainStyle,
    cfg: &SplitConfig,
    count: usize,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let seed = sample_seed(cfg.master_seed, &style.id, i as u64);
        samples.push(generate_scene(style, cfg.height, cfg.width, seed)?);
    }
    Ok(Dataset {
        classes: style.palette.len(),
        height: cfg.height,
        width: cfg.width,
        samples,
    })
}

/// Generate the source training split plus one evaluation split per unseen
/// style, writing each into its own directory under `out_dir`. Returns the
/// directories in generation order (source first).
pub fn make_split(cfg: &SplitConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut dirs = Vec::new();
    let src_dir = cfg.out_dir.join("src_train");
    write_dataset(&generate_split(&cfg.source, cfg, cfg.train_count)?, &src_dir)?;
    dirs.push(src_dir);
    for style in &cfg.unseen {
        let dir = cfg.out_dir.join(&style.id);
        write_dataset(&generate_split(style, cfg, cfg.eval_count)?, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}
