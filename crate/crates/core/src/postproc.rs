//! Rasterization, three-class segmentation and SSIM scoring.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::mesh::Mesh;
use crate::sim::{domain_radius, Phantom};

pub const BACKGROUND: u8 = 0;
pub const RESISTIVE: u8 = 1;
pub const CONDUCTIVE: u8 = 2;

const BINS: usize = 256;

/// Row-major raster over `[xmin, xmax] × [ymin, ymax]`. Row 0 is the top (largest y).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    extent: [f64; 4],
}

impl PixelImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>, extent: [f64; 4]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(EitError::Validation("image dimensions must be positive".into()));
        }
        if values.len() != width * height {
            return Err(EitError::Validation(format!(
                "{} values for a {width}x{height} image",
                values.len()
            )));
        }
        if !(extent[0] < extent[1] && extent[2] < extent[3]) {
            return Err(EitError::Validation(format!("degenerate extent {extent:?}")));
        }
        Ok(PixelImage { width, height, values, extent })
    }

    pub fn filled(width: usize, height: usize, value: f64, extent: [f64; 4]) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], extent)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn extent(&self) -> [f64; 4] {
        self.extent
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Physical coordinates of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let [x0, x1, y0, y1] = self.extent;
        let dx = (x1 - x0) / self.width as f64;
        let dy = (y1 - y0) / self.height as f64;
        (x0 + (col as f64 + 0.5) * dx, y1 - (row as f64 + 0.5) * dy)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> PixelImage {
        PixelImage { values: self.values.iter().map(|v| f(*v)).collect(), ..self.clone() }
    }

    /// Plain-text raster: a header line followed by one row of values per line.
    pub fn to_text(&self) -> String {
        let [x0, x1, y0, y1] = self.extent;
        let mut out = format!("RASTER {} {} {x0:e} {x1:e} {y0:e} {y1:e}\n", self.width, self.height);
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| EitError::io(path, e))
    }

    /// Plain PGM of a label map, with the extent carried in a comment line.
    pub fn to_pgm(&self) -> Result<String> {
        let mut out = String::from("P2\n");
        let [x0, x1, y0, y1] = self.extent;
        writeln!(out, "# extent {x0:e} {x1:e} {y0:e} {y1:e}").unwrap();
        writeln!(out, "{} {}\n2", self.width, self.height).unwrap();
        for row in self.values.chunks(self.width) {
            let mut line = Vec::with_capacity(self.width);
            for &v in row {
                let label = label_of(v)
                    .ok_or_else(|| EitError::Validation(format!("{v} is not a class label")))?;
                line.push(label.to_string());
            }
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()?).map_err(|e| EitError::io(path, e))
    }

    /// Reads a plain PGM label map. Gray levels must be class labels 0, 1 or 2.
    pub fn parse_pgm(text: &str, origin: &Path) -> Result<Self> {
        let mut extent = [-1.0, 1.0, -1.0, 1.0];
        let mut tokens: Vec<(usize, &str)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (body, comment) = match line.find('#') {
                Some(p) => (&line[..p], Some(&line[p + 1..])),
                None => (line, None),
            };
            if let Some(c) = comment {
                let words: Vec<&str> = c.split_whitespace().collect();
                if words.first() == Some(&"extent") {
                    if words.len() != 5 {
                        return Err(EitError::parse(origin, i + 1, "extent needs four numbers"));
                    }
                    for (k, w) in words[1..].iter().enumerate() {
                        extent[k] = w
                            .parse()
                            .map_err(|_| EitError::parse(origin, i + 1, format!("bad extent value '{w}'")))?;
                    }
                }
            }
            tokens.extend(body.split_whitespace().map(|t| (i + 1, t)));
        }
        let mut it = tokens.into_iter();
        let last_line = text.lines().count().max(1);
        let mut next = |what: &str| {
            it.next()
                .ok_or_else(|| EitError::parse(origin, last_line, format!("unexpected end of file, expected {what}")))
        };
        let (line, magic) = next("magic number")?;
        if magic != "P2" {
            return Err(EitError::parse(origin, line, format!("expected P2, found '{magic}'")));
        }
        let mut header = [0usize; 3];
        for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let (line, tok) = next(what)?;
            *slot = tok
                .parse()
                .map_err(|_| EitError::parse(origin, line, format!("bad {what} '{tok}'")))?;
        }
        let [width, height, maxval] = header;
        if width == 0 || height == 0 {
            return Err(EitError::parse(origin, line, "image dimensions must be positive"));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(EitError::parse(origin, line, format!("maxval {maxval} out of range")));
        }
        let mut values = Vec::with_capacity(width * height);
        for _ in 0..width * height {
            let (line, tok) = next("pixel value")?;
            let v: u32 = tok
                .parse()
                .map_err(|_| EitError::parse(origin, line, format!("bad pixel value '{tok}'")))?;
            if v > 2 || v as usize > maxval {
                return Err(EitError::parse(origin, line, format!("pixel value {v} is not a class label")));
            }
            values.push(v as f64);
        }
        if let Ok((line, tok)) = next("") {
            return Err(EitError::parse(origin, line, format!("trailing data '{tok}'")));
        }
        PixelImage::new(width, height, values, extent)
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        Self::parse_pgm(&text, path)
    }
}

fn label_of(v: f64) -> Option<u8> {
    [BACKGROUND, RESISTIVE, CONDUCTIVE].into_iter().find(|l| *l as f64 == v)
}

/// Square extent enclosing a disk of the given radius.
pub fn disk_extent(radius: f64) -> [f64; 4] {
    [-radius, radius, -radius, radius]
}

/// Point location and P1 evaluation of a nodal field on a triangle mesh.
pub struct MeshInterpolator<'a> {
    mesh: &'a Mesh,
    nodal: Vec<f64>,
    origin: [f64; 2],
    cell: f64,
    cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> MeshInterpolator<'a> {
    /// `nodal` holds one value per mesh node.
    pub fn new(mesh: &'a Mesh, nodal: Vec<f64>) -> Result<Self> {
        if nodal.len() != mesh.nodes().len() {
            return Err(EitError::Validation(format!(
                "{} nodal values for {} nodes",
                nodal.len(),
                mesh.nodes().len()
            )));
        }
        let nodes = mesh.nodes();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for n in nodes {
            lo = [lo[0].min(n.x), lo[1].min(n.y)];
            hi = [hi[0].max(n.x), hi[1].max(n.y)];
        }
        let cells = ((mesh.triangles().len() as f64).sqrt().ceil() as usize).max(1);
        let cell = (hi[0] - lo[0]).max(hi[1] - lo[1]) / cells as f64 * (1.0 + 1e-12);
        let mut buckets = vec![Vec::new(); cells * cells];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let xs = tri.map(|v| nodes[v].x);
            let ys = tri.map(|v| nodes[v].y);
            let c0 = Self::cell_of(xs.iter().copied().fold(f64::INFINITY, f64::min), lo[0], cell, cells);
            let c1 = Self::cell_of(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max), lo[0], cell, cells);
            let r0 = Self::cell_of(ys.iter().copied().fold(f64::INFINITY, f64::min), lo[1], cell, cells);
            let r1 = Self::cell_of(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max), lo[1], cell, cells);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    buckets[r * cells + c].push(t);
                }
            }
        }
        Ok(MeshInterpolator { mesh, nodal, origin: lo, cell, cells, buckets })
    }

    /// `σ₀ + ξ` at every node, with boundary nodes at `σ₀`.
    pub fn conductivity(mesh: &'a Mesh, sigma0: f64, xi: &DVector<f64>) -> Result<Self> {
        if xi.len() != mesh.n_interior() {
            return Err(EitError::Validation(format!(
                "{} interior values for {} interior nodes",
                xi.len(),
                mesh.n_interior()
            )));
        }
        let mut interior = xi.iter();
        let nodal = mesh
            .nodes()
            .iter()
            .map(|n| if n.is_boundary { sigma0 } else { sigma0 + interior.next().unwrap() })
            .collect();
        Self::new(mesh, nodal)
    }

    fn cell_of(v: f64, lo: f64, cell: f64, cells: usize) -> usize {
        (((v - lo) / cell).floor().max(0.0) as usize).min(cells - 1)
    }

    fn barycentric(&self, t: usize, x: f64, y: f64) -> [f64; 3] {
        let nodes = self.mesh.nodes();
        let [a, b, c] = self.mesh.triangles()[t].map(|v| &nodes[v]);
        let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        let l1 = ((x - a.x) * (c.y - a.y) - (c.x - a.x) * (y - a.y)) / det;
        let l2 = ((b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y)) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    fn combine(&self, t: usize, w: [f64; 3]) -> f64 {
        let tri = self.mesh.triangles()[t];
        w[0] * self.nodal[tri[0]] + w[1] * self.nodal[tri[1]] + w[2] * self.nodal[tri[2]]
    }

    /// Triangle containing `(x, y)`, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        let c = ((x - self.origin[0]) / self.cell).floor();
        let r = ((y - self.origin[1]) / self.cell).floor();
        if c < 0.0 || r < 0.0 || c >= self.cells as f64 || r >= self.cells as f64 {
            return None;
        }
        let tol = -1e-12;
        self.buckets[r as usize * self.cells + c as usize].iter().find_map(|&t| {
            let w = self.barycentric(t, x, y);
            (w.iter().all(|v| *v >= tol)).then_some((t, w))
        })
    }

    /// Value at `(x, y)` and whether the nearest-triangle fallback was needed.
    pub fn evaluate(&self, x: f64, y: f64) -> (f64, bool) {
        if let Some((t, w)) = self.locate(x, y) {
            return (self.combine(t, w), false);
        }
        let nodes = self.mesh.nodes();
        let mut best = (f64::INFINITY, 0usize, [0.0; 2]);
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let p = tri.map(|v| [nodes[v].x, nodes[v].y]);
            let q = closest_point_on_triangle(p, [x, y]);
            let d = (q[0] - x).hypot(q[1] - y);
            if d < best.0 {
                best = (d, t, q);
            }
        }
        let w = self.barycentric(best.1, best.2[0], best.2[1]).map(|v| v.max(0.0));
        let s = w[0] + w[1] + w[2];
        (self.combine(best.1, w.map(|v| v / s)), true)
    }
}

fn closest_point_on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> [f64; 2] {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * d[0], a[1] + t * d[1]]
}

fn closest_point_on_triangle(v: [[f64; 2]; 3], p: [f64; 2]) -> [f64; 2] {
    let side = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let s = [side(v[0], v[1]), side(v[1], v[2]), side(v[2], v[0])];
    if s.iter().all(|x| *x >= 0.0) || s.iter().all(|x| *x <= 0.0) {
        return p;
    }
    (0..3)
        .map(|k| closest_point_on_segment(v[k], v[(k + 1) % 3], p))
        .min_by(|a, b| {
            let da = (a[0] - p[0]).hypot(a[1] - p[1]);
            let db = (b[0] - p[0]).hypot(b[1] - p[1]);
            da.total_cmp(&db)
        })
        .unwrap()
}

/// Interpolated raster and how many pixels needed the nearest-triangle fallback.
#[derive(Debug, Clone)]
pub struct GridInterpolation {
    pub image: PixelImage,
    pub fallback_pixels: usize,
}

/// Piecewise-linear interpolation of `σ₀ + ξ` onto a `width × height` grid covering the disk.
/// Pixels outside the disk carry `σ₀`.
pub fn interpolate_to_grid(
    mesh: &Mesh,
    sigma0: f64,
    xi: &DVector<f64>,
    width: usize,
    height: usize,
) -> Result<GridInterpolation> {
    let radius = domain_radius(mesh);
    let interp = MeshInterpolator::conductivity(mesh, sigma0, xi)?;
    let mut image = PixelImage::filled(width, height, sigma0, disk_extent(radius))?;
    let mut fallback_pixels = 0;
    for row in 0..height {
        for col in 0..width {
            let (x, y) = image.pixel_center(row, col);
            if x.hypot(y) > radius {
                continue;
            }
            let (v, fell_back) = interp.evaluate(x, y);
            fallback_pixels += fell_back as usize;
            image.values[row * width + col] = v;
        }
    }
    if fallback_pixels > 0 {
        log::debug!("{fallback_pixels} pixels interpolated from the nearest triangle");
    }
    Ok(GridInterpolation { image, fallback_pixels })
}

/// Ground-truth label map of a phantom on a grid covering the disk of the given radius.
pub fn truth_labels(phantom: &Phantom, radius: f64, width: usize, height: usize) -> Result<PixelImage> {
    let mut image = PixelImage::filled(width, height, BACKGROUND as f64, disk_extent(radius))?;
    for row in 0..height {
        for col in 0..width {
            let (x, y) = image.pixel_center(row, col);
            if x.hypot(y) > radius {
                continue;
            }
            let v = phantom.value_at(x, y);
            let label = if v > phantom.background {
                CONDUCTIVE
            } else if v < phantom.background {
                RESISTIVE
            } else {
                BACKGROUND
            };
            image.values[row * width + col] = label as f64;
        }
    }
    Ok(image)
}

/// Thresholds chosen by [`segment`], as the first bin index of the class above them.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: PixelImage,
    /// Values strictly below this are resistive.
    pub lower: Option<f64>,
    /// Values at or above this are conductive.
    pub upper: Option<f64>,
}

struct Histogram {
    counts: [f64; BINS],
    lo: f64,
    width: f64,
}

impl Histogram {
    fn bin(&self, v: f64) -> usize {
        (((v - self.lo) / self.width * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
    }

    fn edge(&self, bin: usize) -> f64 {
        self.lo + self.width * bin as f64 / BINS as f64
    }
}

/// Between-class variance of the partition of the histogram at the given bin cuts.
fn between_class_variance(prefix_w: &[f64], prefix_m: &[f64], cuts: &[usize]) -> f64 {
    let total_w = prefix_w[BINS];
    let mean = prefix_m[BINS] / total_w;
    let mut bounds = vec![0];
    bounds.extend_from_slice(cuts);
    bounds.push(BINS);
    bounds
        .windows(2)
        .map(|b| {
            let w = prefix_w[b[1]] - prefix_w[b[0]];
            if w == 0.0 {
                return 0.0;
            }
            let mu = (prefix_m[b[1]] - prefix_m[b[0]]) / w;
            w * (mu - mean) * (mu - mean)
        })
        .sum::<f64>()
        / total_w
}

/// Two-class Otsu split of the bins `[from, to)`: the first bin of the upper class.
fn otsu_split(prefix_w: &[f64], prefix_m: &[f64], from: usize, to: usize) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for t in from + 1..to {
        let (w0, w1) = (prefix_w[t] - prefix_w[from], prefix_w[to] - prefix_w[t]);
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = (prefix_m[t] - prefix_m[from]) / w0;
        let m1 = (prefix_m[to] - prefix_m[t]) / w1;
        let v = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, t));
        }
    }
    best.map(|(_, t)| t)
}

/// Three-class Otsu labeling around the background level `σ₀`.
///
/// The lower threshold is the Otsu split of the histogram bins at or below the bin of `σ₀`,
/// the upper one the split of the bins at or above it. A threshold is dropped when it adds
/// less than 1% of the total variance to the between-class variance of the other one alone.
pub fn segment(image: &PixelImage, sigma0: f64) -> Result<Segmentation> {
    if image.values.iter().any(|v| !v.is_finite()) || !sigma0.is_finite() {
        return Err(EitError::Domain("segmentation needs finite values".into()));
    }
    let lo = image.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let background = Segmentation { labels: image.map(|_| BACKGROUND as f64), lower: None, upper: None };
    if !(hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)) {
        return Ok(background);
    }
    let mut hist = Histogram { counts: [0.0; BINS], lo, width: hi - lo };
    for &v in &image.values {
        hist.counts[hist.bin(v)] += 1.0;
    }
    // Bin centers in units of the bin index; Otsu is affine invariant so this loses nothing.
    let mut prefix_w = [0.0; BINS + 1];
    let mut prefix_m = [0.0; BINS + 1];
    for b in 0..BINS {
        prefix_w[b + 1] = prefix_w[b] + hist.counts[b];
        prefix_m[b + 1] = prefix_m[b] + hist.counts[b] * b as f64;
    }
    let mean = prefix_m[BINS] / prefix_w[BINS];
    let total_var = hist
        .counts
        .iter()
        .enumerate()
        .map(|(b, c)| c * (b as f64 - mean).powi(2))
        .sum::<f64>()
        / prefix_w[BINS];

    let s = hist.bin(sigma0.clamp(lo, hi));
    let mut lower = otsu_split(&prefix_w, &prefix_m, 0, s + 1);
    let mut upper = otsu_split(&prefix_w, &prefix_m, s, BINS);
    let cuts = |a: Option<usize>, b: Option<usize>| -> Vec<usize> { a.into_iter().chain(b).collect() };
    let both = between_class_variance(&prefix_w, &prefix_m, &cuts(lower, upper));
    let without_lower = between_class_variance(&prefix_w, &prefix_m, &cuts(None, upper));
    let without_upper = between_class_variance(&prefix_w, &prefix_m, &cuts(lower, None));
    if both - without_lower < 0.01 * total_var {
        lower = None;
    }
    if both - without_upper < 0.01 * total_var {
        upper = None;
    }

    let labels = image.map(|v| {
        let b = hist.bin(v);
        if upper.is_some_and(|u| b >= u) {
            CONDUCTIVE as f64
        } else if lower.is_some_and(|l| b < l) {
            RESISTIVE as f64
        } else {
            BACKGROUND as f64
        }
    });
    Ok(Segmentation { labels, lower: lower.map(|b| hist.edge(b)), upper: upper.map(|b| hist.edge(b)) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SsimVariant {
    /// Statistics over the whole image.
    #[default]
    Global,
    /// Mean over all 8×8 windows at stride 1.
    Windowed,
}

impl std::str::FromStr for SsimVariant {
    type Err = EitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SsimVariant::Global),
            "windowed" => Ok(SsimVariant::Windowed),
            other => Err(EitError::Config(format!("unknown SSIM variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub ssim_conductive: f64,
    pub ssim_resistive: f64,
    pub combined: f64,
    pub variant: SsimVariant,
}

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 8;

/// SSIM of two equally sized samples with unit dynamic range.
fn ssim_stats(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = a.clone().count() as f64;
    let ma = a.clone().sum::<f64>() / n;
    let mb = b.clone().sum::<f64>() / n;
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        vaa += dx * dx;
        vbb += dy * dy;
        vab += dx * dy;
    }
    let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
    ((2.0 * ma * mb + C1) * (2.0 * vab + C2)) / ((ma * ma + mb * mb + C1) * (vaa + vbb + C2))
}

/// SSIM between two binary maps.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize, variant: SsimVariant) -> f64 {
    match variant {
        SsimVariant::Global => ssim_stats(a.iter().copied(), b.iter().copied()),
        SsimVariant::Windowed => {
            let (w, h) = (WINDOW.min(width), WINDOW.min(height));
            let mut total = 0.0;
            let mut count = 0usize;
            for r in 0..=height - h {
                for c in 0..=width - w {
                    let idx = (r..r + h).flat_map(move |rr| (c..c + w).map(move |cc| rr * width + cc));
                    total += ssim_stats(idx.clone().map(|i| a[i]), idx.map(|i| b[i]));
                    count += 1;
                }
            }
            total / count as f64
        }
    }
}

/// Class-wise SSIM of two label maps, averaged over the conductive and resistive classes.
pub fn score(result: &PixelImage, truth: &PixelImage, variant: SsimVariant) -> Result<SegmentationScore> {
    if result.width != truth.width || result.height != truth.height {
        return Err(EitError::Validation(format!(
            "label maps differ in size: {}x{} vs {}x{}",
            result.width, result.height, truth.width, truth.height
        )));
    }
    for img in [result, truth] {
        if let Some(v) = img.values.iter().find(|v| label_of(**v).is_none()) {
            return Err(EitError::Validation(format!("{v} is not a class label")));
        }
    }
    let class = |img: &PixelImage, c: u8| -> Vec<f64> {
        img.values.iter().map(|v| (*v == c as f64) as u8 as f64).collect()
    };
    let per_class = |c: u8| ssim(&class(result, c), &class(truth, c), result.width, result.height, variant);
    let ssim_conductive = per_class(CONDUCTIVE);
    let ssim_resistive = per_class(RESISTIVE);
    Ok(SegmentationScore {
        ssim_conductive,
        ssim_resistive,
        combined: 0.5 * (ssim_conductive + ssim_resistive),
        variant,
    })
}
