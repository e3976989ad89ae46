//! Felzenszwalb–Huttenlocher graph-based segmentation on grayscale grids.
//!
//! Pixels are graph nodes, grid neighbours are joined by edges weighted with
//! the absolute intensity difference. Edges are visited in ascending weight
//! and two components merge when the edge weight does not exceed
//! `min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`, where `Int` is the largest
//! edge weight already merged inside a component. A final pass absorbs
//! components smaller than `min_size` into their cheapest neighbour.

use serde::{Deserialize, Serialize};

use crate::datamodel::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FHConfig {
    /// Threshold constant `k`, in the image's intensity units.
    pub scale_k: f64,
    /// Smallest component kept, in pixels.
    pub min_size: usize,
    /// Gaussian pre-blur; 0 disables it.
    pub smoothing_sigma: f64,
    /// 4 or 8.
    pub connectivity: u8,
}

impl Default for FHConfig {
    fn default() -> Self {
        Self {
            scale_k: 100.0,
            min_size: 20,
            smoothing_sigma: 0.8,
            connectivity: 8,
        }
    }
}

impl FHConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_k > 0.0) {
            return Err(Error::Config("scale_k must be > 0".into()));
        }
        if self.min_size == 0 {
            return Err(Error::Config("min_size must be >= 1".into()));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::Config("smoothing_sigma must be >= 0".into()));
        }
        if !matches!(self.connectivity, 4 | 8) {
            return Err(Error::Config("connectivity must be 4 or 8".into()));
        }
        Ok(())
    }
}

/// Dense component labelling of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    pub height: usize,
    pub width: usize,
    /// Component id per pixel, dense in `0..n_components`.
    pub labels: Vec<u32>,
    pub n_components: usize,
}

impl SuperpixelMap {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub id: u32,
    pub size: usize,
    pub bbox: BoundingBox,
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
    size: Vec<usize>,
    /// Largest merged edge weight inside each root's component.
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize, weight: f64) -> usize {
        let (big, small) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        if self.rank[big] == self.rank[small] {
            self.rank[big] += 1;
        }
        self.size[big] += self.size[small];
        self.internal[big] = self.internal[big].max(self.internal[small]).max(weight);
        big
    }
}

#[derive(Clone, Copy)]
struct Edge {
    weight: f64,
    a: u32,
    b: u32,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize + 1;
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(values: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = k.len() as isize - 1;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for d in -r..=r {
                acc += k[d.unsigned_abs()] * values[y * width + clamp(x as isize + d, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for d in -r..=r {
                acc += k[d.unsigned_abs()] * tmp[clamp(y as isize + d, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn build_edges(v: &[f64], height: usize, width: usize, connectivity: u8) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(height * width * if connectivity == 8 { 4 } else { 2 });
    let mut push = |a: usize, b: usize| {
        edges.push(Edge {
            weight: (v[a] - v[b]).abs(),
            a: a as u32,
            b: b as u32,
        })
    };
    // Generation order (source pixel row-major, then direction) is the
    // tie-break for equal weights.
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                push(i, i + 1);
            }
            if y + 1 < height {
                push(i, i + width);
            }
            if connectivity == 8 && y + 1 < height {
                if x + 1 < width {
                    push(i, i + width + 1);
                }
                if x > 0 {
                    push(i, i + width - 1);
                }
            }
        }
    }
    edges
}

/// Segments `image` into superpixels. Intensities are used as given; the
/// default `scale_k` assumes a `[0, 255]` range.
pub fn fh_segment(image: &GrayImage, cfg: &FHConfig) -> Result<SuperpixelMap> {
    cfg.validate()?;
    let (height, width) = (image.height, image.width);
    if height == 0 || width == 0 {
        return Err(Error::EmptyImage);
    }
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Image("non-finite intensity".into()));
    }
    let raw: Vec<f64> = image.data.iter().map(|&v| f64::from(v)).collect();
    let smooth = gaussian_blur(&raw, height, width, cfg.smoothing_sigma);
    let mut edges = build_edges(&smooth, height, width, cfg.connectivity);
    // Stable sort keeps generation order among equal weights.
    edges.sort_by(|a, b| a.weight.total_cmp(&b.weight));

    let n = height * width;
    let mut ds = DisjointSet::new(n);
    for e in &edges {
        let a = ds.find(e.a as usize);
        let b = ds.find(e.b as usize);
        if a == b {
            continue;
        }
        let ta = ds.internal[a] + cfg.scale_k / ds.size[a] as f64;
        let tb = ds.internal[b] + cfg.scale_k / ds.size[b] as f64;
        if e.weight <= ta.min(tb) {
            ds.union(a, b, e.weight);
        }
    }
    for e in &edges {
        let a = ds.find(e.a as usize);
        let b = ds.find(e.b as usize);
        if a != b && (ds.size[a] < cfg.min_size || ds.size[b] < cfg.min_size) {
            ds.union(a, b, e.weight);
        }
    }

    let mut dense = vec![u32::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut next = 0u32;
    for i in 0..n {
        let root = ds.find(i);
        if dense[root] == u32::MAX {
            dense[root] = next;
            next += 1;
        }
        labels.push(dense[root]);
    }
    Ok(SuperpixelMap {
        height,
        width,
        labels,
        n_components: next as usize,
    })
}

/// Size and tight bounding box of every component, indexed by id.
pub fn component_stats(sp: &SuperpixelMap) -> Vec<ComponentStats> {
    let mut stats: Vec<ComponentStats> = (0..sp.n_components as u32)
        .map(|id| ComponentStats {
            id,
            size: 0,
            bbox: BoundingBox {
                min_row: usize::MAX,
                min_col: usize::MAX,
                max_row: 0,
                max_col: 0,
            },
        })
        .collect();
    for row in 0..sp.height {
        for col in 0..sp.width {
            let s = &mut stats[sp.get(row, col) as usize];
            s.size += 1;
            s.bbox.min_row = s.bbox.min_row.min(row);
            s.bbox.min_col = s.bbox.min_col.min(col);
            s.bbox.max_row = s.bbox.max_row.max(row);
            s.bbox.max_col = s.bbox.max_col.max(col);
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: f64, min_size: usize) -> FHConfig {
        FHConfig {
            scale_k: k,
            min_size,
            smoothing_sigma: 0.0,
            connectivity: 4,
        }
    }

    #[test]
    fn constant_image_is_one_component() {
        for c in [cfg(1.0, 1), FHConfig::default(), cfg(1e-3, 5)] {
            let sp = fh_segment(&GrayImage::filled(7, 5, 42.0), &c).unwrap();
            assert_eq!(sp.n_components, 1);
        }
    }

    #[test]
    fn two_pixel_edge_above_threshold_stays_split() {
        let img = GrayImage::new(1, 2, vec![0.0, 255.0]).unwrap();
        let sp = fh_segment(&img, &cfg(1.0, 1)).unwrap();
        assert_eq!(sp.n_components, 2);
        assert_eq!(sp.labels, vec![0, 1]);
    }

    #[test]
    fn vertical_pair_and_two_halves() {
        let img = GrayImage::new(2, 1, vec![0.0, 255.0]).unwrap();
        assert_eq!(fh_segment(&img, &cfg(1.0, 1)).unwrap().n_components, 2);

        let data = (0..16).map(|i| if i % 4 < 2 { 10.0 } else { 200.0 }).collect();
        let img = GrayImage::new(4, 4, data).unwrap();
        let sp = fh_segment(&img, &cfg(50.0, 1)).unwrap();
        assert_eq!(sp.n_components, 2);
        for i in 0..16 {
            assert_eq!(sp.labels[i], u32::from(i % 4 >= 2));
        }
    }

    fn connected_components(sp: &SuperpixelMap, connectivity: u8) -> usize {
        let (h, w) = (sp.height, sp.width);
        let mut seen = vec![false; h * w];
        let mut count = 0;
        for start in 0..h * w {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if (dy == 0 && dx == 0) || (connectivity == 4 && dy != 0 && dx != 0) {
                            continue;
                        }
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if !seen[j] && sp.labels[j] == sp.labels[i] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    proptest::proptest! {
        #[test]
        fn partition_connected_and_min_size(
            data in proptest::collection::vec(0f32..255.0, 12 * 10),
            k in 1f64..500.0,
            min_size in 1usize..15,
            eight in proptest::bool::ANY,
            sigma in 0f64..1.5,
        ) {
            let c = FHConfig { scale_k: k, min_size, smoothing_sigma: sigma, connectivity: if eight { 8 } else { 4 } };
            let img = GrayImage::new(12, 10, data).unwrap();
            let sp = fh_segment(&img, &c).unwrap();
            proptest::prop_assert!(sp.labels.iter().all(|&l| (l as usize) < sp.n_components));
            proptest::prop_assert_eq!(connected_components(&sp, c.connectivity), sp.n_components);
            let stats = component_stats(&sp);
            proptest::prop_assert_eq!(stats.iter().map(|s| s.size).sum::<usize>(), 120);
            if sp.n_components > 1 {
                proptest::prop_assert!(stats.iter().all(|s| s.size >= min_size));
            }
        }
    }

    #[test]
    fn min_size_absorbs_small_components() {
        let img = GrayImage::new(1, 2, vec![0.0, 255.0]).unwrap();
        let sp = fh_segment(&img, &cfg(1.0, 2)).unwrap();
        assert_eq!(sp.n_components, 1);
    }

    #[test]
    fn component_stats_single_and_halves() {
        let sp = SuperpixelMap { height: 3, width: 3, labels: vec![0; 9], n_components: 1 };
        let s = component_stats(&sp);
        assert_eq!(s[0].size, 9);
        assert_eq!(s[0].bbox, BoundingBox { min_row: 0, min_col: 0, max_row: 2, max_col: 2 });

        let labels = (0..16).map(|i| u32::from(i % 4 >= 2)).collect();
        let sp = SuperpixelMap { height: 4, width: 4, labels, n_components: 2 };
        let s = component_stats(&sp);
        assert_eq!((s[0].size, s[1].size), (8, 8));
        assert_eq!(s[1].bbox, BoundingBox { min_row: 0, min_col: 2, max_row: 3, max_col: 3 });
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let v = vec![3.0; 20];
        let b = gaussian_blur(&v, 4, 5, 1.3);
        assert!(b.iter().all(|x| (x - 3.0).abs() < 1e-12));
        let k = gaussian_kernel(0.8);
        assert!((k[0] + 2.0 * k[1..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(fh_segment(&GrayImage::filled(0, 0, 0.0), &cfg(1.0, 1)), Err(Error::EmptyImage)));
        assert!(fh_segment(&GrayImage::filled(2, 2, 0.0), &cfg(0.0, 1)).is_err());
        assert!(fh_segment(&GrayImage::filled(2, 2, f32::NAN), &cfg(1.0, 1)).is_err());
        let bad = FHConfig { connectivity: 6, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
