//! On-disk containers for models and datasets.
//!
//! Each object is a UTF-8 text manifest (`<name>.manifest`, `key = value`
//! lines plus one `layer = ...` line per layer) next to a raw blob
//! (`<name>.blob`) that starts with the magic bytes `RPRN1` followed by
//! little-endian `f64` values in row-major order. Datasets add
//! `<name>.labels`, a raw little-endian `i64` vector. Manifest offsets are
//! `start+len` in units of values, counted from the first value after the
//! magic.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::LabeledSet;
use crate::error::{Error, FormatErrorKind, Result};
use crate::nn::{BatchNorm2d, Conv2d, Dense, Layer, MaxPool2d, ModelGraph};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"RPRN1";
pub const FORMAT_VERSION: u32 = 1;

const MODEL_KIND: &str = "relprune-model";
const DATASET_KIND: &str = "relprune-dataset";

/// Appends an extension to the full file name (`a.b` -> `a.b.manifest`).
pub fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn fmt_err(path: &Path, kind: FormatErrorKind, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), kind, detail: detail.into() }
}

fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(MAGIC.len() + values.len() * 8);
    bytes.extend_from_slice(MAGIC);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_blob(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fmt_err(path, FormatErrorKind::Magic, "missing RPRN1 header"));
    }
    let body = &bytes[MAGIC.len()..];
    if body.len() % 8 != 0 {
        return Err(fmt_err(path, FormatErrorKind::Truncated, format!("{} trailing bytes", body.len() % 8)));
    }
    let available = body.len() / 8;
    if available < expected {
        return Err(fmt_err(
            path,
            FormatErrorKind::Truncated,
            format!("manifest declares {expected} values, blob holds {available}"),
        ));
    }
    if available > expected {
        return Err(fmt_err(
            path,
            FormatErrorKind::Inconsistent,
            format!("blob holds {available} values, manifest declares {expected}"),
        ));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Parsed manifest: ordered key/value pairs and layer lines.
struct Manifest {
    path: PathBuf,
    keys: BTreeMap<String, String>,
    layers: Vec<String>,
}

impl Manifest {
    fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        if text.trim().is_empty() {
            return Err(fmt_err(path, FormatErrorKind::Empty, "empty manifest"));
        }
        let mut keys = BTreeMap::new();
        let mut layers = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt_err(path, FormatErrorKind::Syntax, format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "layer" {
                layers.push(v.to_string());
            } else {
                keys.insert(k.to_string(), v.to_string());
            }
        }
        let m = Manifest { path: path.to_path_buf(), keys, layers };
        let version: u32 = m.parse("format_version")?;
        if version != FORMAT_VERSION {
            return Err(fmt_err(
                path,
                FormatErrorKind::Version,
                format!("format_version {version}, this build reads {FORMAT_VERSION}"),
            ));
        }
        Ok(m)
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.keys
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| fmt_err(&self.path, FormatErrorKind::Syntax, format!("missing key {key}")))
    }

    fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| fmt_err(&self.path, FormatErrorKind::Syntax, format!("bad value for {key}: {raw:?}")))
    }

    fn dims(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| fmt_err(&self.path, FormatErrorKind::Syntax, format!("bad dims for {key}"))))
            .collect()
    }

    fn sibling(&self, name: &str) -> PathBuf {
        self.path.parent().unwrap_or(Path::new(".")).join(name)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        let got = self.get("format")?;
        if got != kind {
            return Err(fmt_err(&self.path, FormatErrorKind::Inconsistent, format!("format {got:?}, expected {kind:?}")));
        }
        Ok(())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Blob region of a layer parameter.
struct Span {
    start: usize,
    len: usize,
}

struct BlobWriter {
    values: Vec<f64>,
}

impl BlobWriter {
    fn push<T: Scalar>(&mut self, data: &[T]) -> String {
        let start = self.values.len();
        self.values.extend(data.iter().map(|v| v.as_f64()));
        format!("{start}+{}", data.len())
    }
}

/// Writes `<base>.manifest` and `<base>.blob`.
pub fn save_model<T: Scalar>(model: &ModelGraph<T>, base: &Path) -> Result<()> {
    let blob_path = with_suffix(base, "blob");
    let mut blob = BlobWriter { values: Vec::new() };
    let mut layer_lines = Vec::new();
    let idx = model.filter_index();
    let mut conv = 0;
    for layer in model.layers() {
        let line = match layer {
            Layer::Conv2d(c) => {
                conv += 1;
                let mask: String =
                    model.mask()[idx.range(conv - 1)].iter().map(|&a| if a { '1' } else { '0' }).collect();
                format!(
                    "conv2d in={} out={} kernel={} stride={} padding={} weight={} bias={} mask={mask}",
                    c.in_channels,
                    c.out_channels,
                    c.kernel,
                    c.stride,
                    c.padding,
                    blob.push(c.weight.data()),
                    blob.push(&c.bias)
                )
            }
            Layer::BatchNorm2d(b) => format!(
                "batchnorm2d channels={} eps={:?} gamma={} beta={} mean={} var={}",
                b.channels,
                b.eps.as_f64(),
                blob.push(&b.gamma),
                blob.push(&b.beta),
                blob.push(&b.running_mean),
                blob.push(&b.running_var)
            ),
            Layer::Relu => "relu".to_string(),
            Layer::MaxPool2d(p) => format!("maxpool2d window={} stride={}", p.window, p.stride),
            Layer::GlobalAvgPool => "globalavgpool".to_string(),
            Layer::Flatten => "flatten".to_string(),
            Layer::Dense(d) => format!(
                "dense in={} out={} weight={} bias={}",
                d.in_features,
                d.out_features,
                blob.push(d.weight.data()),
                blob.push(&d.bias)
            ),
        };
        layer_lines.push(line);
    }
    let shape: Vec<String> = model.input_shape().iter().map(|d| d.to_string()).collect();
    let mut text = String::new();
    text.push_str(&format!("format = {MODEL_KIND}\nformat_version = {FORMAT_VERSION}\n"));
    text.push_str(&format!("input_shape = {}\n", shape.join(" ")));
    text.push_str(&format!("num_classes = {}\n", model.num_classes()));
    text.push_str(&format!("f_num = {}\n", model.filter_count()));
    text.push_str(&format!("blob = {}\n", file_name(&blob_path)));
    text.push_str(&format!("blob_values = {}\n", blob.values.len()));
    text.push_str(&format!("layers = {}\n", layer_lines.len()));
    for l in &layer_lines {
        text.push_str(&format!("layer = {l}\n"));
    }
    write_blob(&blob_path, &blob.values)?;
    let mpath = with_suffix(base, "manifest");
    fs::write(&mpath, text).map_err(io_err(&mpath))
}

struct LayerLine<'a> {
    path: &'a Path,
    n: usize,
    kind: &'a str,
    fields: BTreeMap<&'a str, &'a str>,
}

impl<'a> LayerLine<'a> {
    fn parse(path: &'a Path, n: usize, line: &'a str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let mut fields = BTreeMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| fmt_err(path, FormatErrorKind::Syntax, format!("layer {n}: bad field {p:?}")))?;
            fields.insert(k, v);
        }
        Ok(LayerLine { path, n, kind, fields })
    }

    fn raw(&self, key: &str) -> Result<&'a str> {
        self.fields
            .get(key)
            .copied()
            .ok_or_else(|| fmt_err(self.path, FormatErrorKind::Syntax, format!("layer {}: missing {key}", self.n)))
    }

    fn num<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        self.raw(key)?
            .parse()
            .map_err(|_| fmt_err(self.path, FormatErrorKind::Syntax, format!("layer {}: bad {key}", self.n)))
    }

    fn span(&self, key: &str, expected_len: usize) -> Result<Span> {
        let raw = self.raw(key)?;
        let bad = || fmt_err(self.path, FormatErrorKind::Syntax, format!("layer {}: bad span {key}={raw}", self.n));
        let (s, l) = raw.split_once('+').ok_or_else(bad)?;
        let span = Span { start: s.parse().map_err(|_| bad())?, len: l.parse().map_err(|_| bad())? };
        if span.len != expected_len {
            return Err(fmt_err(
                self.path,
                FormatErrorKind::Inconsistent,
                format!("layer {}: {key} spans {} values, shape needs {expected_len}", self.n, span.len),
            ));
        }
        Ok(span)
    }
}

/// Reads a model written by [`save_model`]. `base` is the path without the
/// `.manifest` extension.
pub fn load_model<T: Scalar>(base: &Path) -> Result<ModelGraph<T>> {
    let mpath = with_suffix(base, "manifest");
    let m = Manifest::read(&mpath)?;
    m.expect_kind(MODEL_KIND)?;
    let input_shape = m.dims("input_shape")?;
    let declared_layers: usize = m.parse("layers")?;
    if declared_layers != m.layers.len() {
        return Err(fmt_err(
            &mpath,
            FormatErrorKind::Inconsistent,
            format!("layers = {declared_layers} but {} layer lines", m.layers.len()),
        ));
    }
    let blob_values: usize = m.parse("blob_values")?;
    let blob_path = m.sibling(m.get("blob")?);

    // Parse structure first so span problems surface before the blob is read.
    let lines: Vec<LayerLine> =
        m.layers.iter().enumerate().map(|(n, l)| LayerLine::parse(&mpath, n, l)).collect::<Result<_>>()?;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut record = |s: &Span| -> Result<()> {
        if s.start + s.len > blob_values {
            return Err(fmt_err(
                &mpath,
                FormatErrorKind::Inconsistent,
                format!("span {}+{} exceeds blob_values {blob_values}", s.start, s.len),
            ));
        }
        spans.push((s.start, s.len));
        Ok(())
    };
    enum Pending {
        Conv { in_ch: usize, out: usize, k: usize, stride: usize, pad: usize, w: Span, b: Span, mask: Vec<bool> },
        Bn { ch: usize, eps: f64, spans: [Span; 4] },
        Plain(Layer<f64>),
        Dense { i: usize, o: usize, w: Span, b: Span },
    }
    let mut pending = Vec::with_capacity(lines.len());
    for l in &lines {
        let p = match l.kind {
            "conv2d" => {
                let (in_ch, out, k): (usize, usize, usize) = (l.num("in")?, l.num("out")?, l.num("kernel")?);
                let w = l.span("weight", out * in_ch * k * k)?;
                let b = l.span("bias", out)?;
                record(&w)?;
                record(&b)?;
                let mask_raw = l.raw("mask")?;
                let mask: Vec<bool> = mask_raw.chars().map(|c| c == '1').collect();
                if mask.len() != out || mask_raw.chars().any(|c| c != '0' && c != '1') {
                    return Err(fmt_err(&mpath, FormatErrorKind::Inconsistent, format!("layer {}: mask {mask_raw:?}", l.n)));
                }
                Pending::Conv { in_ch, out, k, stride: l.num("stride")?, pad: l.num("padding")?, w, b, mask }
            }
            "batchnorm2d" => {
                let ch: usize = l.num("channels")?;
                let spans = [l.span("gamma", ch)?, l.span("beta", ch)?, l.span("mean", ch)?, l.span("var", ch)?];
                for s in &spans {
                    record(s)?;
                }
                Pending::Bn { ch, eps: l.num("eps")?, spans }
            }
            "relu" => Pending::Plain(Layer::Relu),
            "maxpool2d" => Pending::Plain(Layer::MaxPool2d(MaxPool2d { window: l.num("window")?, stride: l.num("stride")? })),
            "globalavgpool" => Pending::Plain(Layer::GlobalAvgPool),
            "flatten" => Pending::Plain(Layer::Flatten),
            "dense" => {
                let (i, o): (usize, usize) = (l.num("in")?, l.num("out")?);
                let w = l.span("weight", i * o)?;
                let b = l.span("bias", o)?;
                record(&w)?;
                record(&b)?;
                Pending::Dense { i, o, w, b }
            }
            other => {
                return Err(fmt_err(&mpath, FormatErrorKind::Syntax, format!("layer {}: unknown kind {other:?}", l.n)))
            }
        };
        pending.push(p);
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[0].0 + w[0].1 > w[1].0) {
        return Err(fmt_err(&mpath, FormatErrorKind::Inconsistent, "overlapping parameter spans"));
    }

    let blob = read_blob(&blob_path, blob_values)?;
    let take = |s: &Span| -> Vec<T> { blob[s.start..s.start + s.len].iter().map(|&v| T::of(v)).collect() };
    let mut layers = Vec::with_capacity(pending.len());
    let mut mask = Vec::new();
    for p in pending {
        layers.push(match p {
            Pending::Conv { in_ch, out, k, stride, pad, w, b, mask: m } => {
                mask.extend(m);
                Layer::Conv2d(Conv2d::new(in_ch, out, k, stride, pad, Tensor::new(vec![out, in_ch, k, k], take(&w))?, take(&b))?)
            }
            Pending::Bn { ch, eps, spans } => Layer::BatchNorm2d(BatchNorm2d {
                channels: ch,
                gamma: take(&spans[0]),
                beta: take(&spans[1]),
                running_mean: take(&spans[2]),
                running_var: take(&spans[3]),
                eps: T::of(eps),
            }),
            Pending::Plain(l) => match l {
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2d(p) => Layer::MaxPool2d(p),
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                _ => Layer::Flatten,
            },
            Pending::Dense { i, o, w, b } => {
                Layer::Dense(Dense::new(i, o, Tensor::new(vec![o, i], take(&w))?, take(&b))?)
            }
        });
    }
    let mut model = ModelGraph::new(input_shape, layers)
        .map_err(|e| fmt_err(&mpath, FormatErrorKind::Inconsistent, e.to_string()))?;
    let f_num: usize = m.parse("f_num")?;
    if f_num != model.filter_count() {
        return Err(fmt_err(
            &mpath,
            FormatErrorKind::Inconsistent,
            format!("f_num = {f_num}, conv channels total {}", model.filter_count()),
        ));
    }
    let classes: usize = m.parse("num_classes")?;
    if classes != model.num_classes() {
        return Err(fmt_err(&mpath, FormatErrorKind::Inconsistent, format!("num_classes = {classes}, model outputs {}", model.num_classes())));
    }
    model.set_mask(mask).map_err(|e| fmt_err(&mpath, FormatErrorKind::Inconsistent, e.to_string()))?;
    Ok(model)
}

/// Writes `<base>.manifest`, `<base>.blob`, and `<base>.labels`.
pub fn save_dataset<T: Scalar>(set: &LabeledSet<T>, base: &Path) -> Result<()> {
    let blob_path = with_suffix(base, "blob");
    let labels_path = with_suffix(base, "labels");
    let values: Vec<f64> = set.images().iter().flat_map(|im| im.data().iter().map(|v| v.as_f64())).collect();
    write_blob(&blob_path, &values)?;
    let labels: Vec<u8> = set.labels().iter().flat_map(|&l| (l as i64).to_le_bytes()).collect();
    fs::write(&labels_path, labels).map_err(io_err(&labels_path))?;
    let shape: Vec<String> = set.image_shape().iter().map(|d| d.to_string()).collect();
    let text = format!(
        "format = {DATASET_KIND}\nformat_version = {FORMAT_VERSION}\ncount = {}\nimage_shape = {}\nnum_classes = {}\nblob = {}\nlabels = {}\n",
        set.len(),
        shape.join(" "),
        set.num_classes(),
        file_name(&blob_path),
        file_name(&labels_path)
    );
    let mpath = with_suffix(base, "manifest");
    fs::write(&mpath, text).map_err(io_err(&mpath))
}

pub fn load_dataset<T: Scalar>(base: &Path) -> Result<LabeledSet<T>> {
    let mpath = with_suffix(base, "manifest");
    let m = Manifest::read(&mpath)?;
    m.expect_kind(DATASET_KIND)?;
    let count: usize = m.parse("count")?;
    if count == 0 {
        return Err(fmt_err(&mpath, FormatErrorKind::Empty, "dataset with zero images"));
    }
    let shape = m.dims("image_shape")?;
    let per: usize = shape.iter().product();
    if per == 0 {
        return Err(fmt_err(&mpath, FormatErrorKind::Inconsistent, "zero-sized image shape"));
    }
    let num_classes: usize = m.parse("num_classes")?;
    let blob = read_blob(&m.sibling(m.get("blob")?), count * per)?;
    let labels_path = m.sibling(m.get("labels")?);
    let raw = fs::read(&labels_path).map_err(io_err(&labels_path))?;
    if raw.len() % 8 != 0 || raw.len() / 8 != count {
        return Err(fmt_err(
            &labels_path,
            FormatErrorKind::Inconsistent,
            format!("{} bytes of labels for {count} images", raw.len()),
        ));
    }
    let labels = raw
        .chunks_exact(8)
        .map(|c| {
            let v = i64::from_le_bytes(c.try_into().unwrap());
            usize::try_from(v)
                .ok()
                .filter(|&l| l < num_classes)
                .ok_or_else(|| fmt_err(&labels_path, FormatErrorKind::Inconsistent, format!("label {v} outside 0..{num_classes}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let images = blob
        .chunks_exact(per)
        .map(|c| Tensor::new(shape.clone(), c.iter().map(|&v| T::of(v)).collect()))
        .collect::<Result<Vec<_>>>()?;
    LabeledSet::new(images, labels, num_classes)
}
