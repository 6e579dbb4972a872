//! Image containers and sRGB <-> CIELAB conversion.
//!
//! Conversions go sRGB (8-bit) -> linear RGB -> XYZ (D65) -> CIELAB. The
//! reference white is taken as the row sums of the RGB->XYZ matrix so that
//! neutral grays map to `a = b = 0` up to rounding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{count, cst, Real};

pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn white_point() -> [f64; 3] {
    [
        RGB_TO_XYZ[0].iter().sum(),
        RGB_TO_XYZ[1].iter().sum(),
        RGB_TO_XYZ[2].iter().sum(),
    ]
}

/// 8-bit sRGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(
                "dimensions",
                "width and height must be positive",
            ));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", width * height),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let pixels = (0..width * height)
            .map(|i| f(i % width, i / width))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

/// A single-channel grid of scalars, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(
                "dimensions",
                "width and height must be positive",
            ));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        let data = (0..width * height)
            .map(|i| f(i % width, i / width))
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    /// Bilinear sample at a continuous pixel position, clamping to the border.
    pub fn sample_bilinear(&self, x: T, y: T) -> T {
        let max_x = count::<T>(self.width - 1);
        let max_y = count::<T>(self.height - 1);
        let x = x.max(T::zero()).min(max_x);
        let y = y.max(T::zero()).min(max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap_or(0);
        let yi = y0.to_usize().unwrap_or(0);
        let xj = (xi + 1).min(self.width - 1);
        let yj = (yi + 1).min(self.height - 1);
        let one = T::one();
        let top = self.get(xi, yi) * (one - fx) + self.get(xj, yi) * fx;
        let bottom = self.get(xi, yj) * (one - fx) + self.get(xj, yj) * fx;
        top * (one - fy) + bottom * fy
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / count(self.data.len())
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> T {
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            / count(self.data.len());
        var.sqrt()
    }

    /// Area-weighted resize to an arbitrary target size.
    pub fn resize_area(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("dimensions", "target must be nonempty"));
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let xw = axis_weights(self.width, width, sx);
        let yw = axis_weights(self.height, height, sy);
        let data = (0..height)
            .into_par_iter()
            .flat_map_iter(|ty| {
                let yw = &yw[ty];
                xw.iter().map(move |xw| {
                    let mut acc = T::zero();
                    let mut norm = T::zero();
                    for &(sy_i, wy) in yw {
                        for &(sx_i, wx) in xw {
                            let w: T = cst(wx * wy);
                            acc = acc + self.get(sx_i, sy_i) * w;
                            norm = norm + w;
                        }
                    }
                    acc / norm
                })
            })
            .collect();
        Self::new(width, height, data)
    }
}

fn axis_weights(src: usize, dst: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = (t + 1) as f64 * scale;
            let mut out = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let w = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if w > 0.0 {
                    out.push((s, w));
                }
                s += 1;
            }
            if out.is_empty() {
                out.push(((lo as usize).min(src - 1), 1.0));
            }
            out
        })
        .collect()
}

/// The two chroma planes of a Lab image.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromaPlanes<T> {
    pub a: Plane<T>,
    pub b: Plane<T>,
}

impl<T: Real> ChromaPlanes<T> {
    pub fn new(a: Plane<T>, b: Plane<T>) -> Result<Self> {
        if a.dims() != b.dims() {
            return Err(Error::dims(a.dims(), b.dims()));
        }
        Ok(Self { a, b })
    }

    pub fn neutral(width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            a: Plane::filled(width, height, T::zero())?,
            b: Plane::filled(width, height, T::zero())?,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.a.dims()
    }

    /// Per-pixel convex blend `w * self + (1 - w) * other`.
    pub fn blend(&self, other: &Self, weight: &Plane<T>) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        if self.dims() != weight.dims() {
            return Err(Error::dims(self.dims(), weight.dims()));
        }
        let mix = |p: &Plane<T>, q: &Plane<T>| {
            let data = p
                .data()
                .iter()
                .zip(q.data())
                .zip(weight.data())
                .map(|((&x, &y), &w)| w * x + (T::one() - w) * y)
                .collect();
            Plane::new(p.width(), p.height(), data)
        };
        Ok(Self {
            a: mix(&self.a, &other.a)?,
            b: mix(&self.b, &other.b)?,
        })
    }

    /// Mean over pixels of `(|Δa| + |Δb|) / 2`.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<T> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        let total: T = self
            .a
            .data()
            .iter()
            .zip(other.a.data())
            .zip(self.b.data().iter().zip(other.b.data()))
            .map(|((&a0, &a1), (&b0, &b1))| ((a0 - a1).abs() + (b0 - b1).abs()) * cst(0.5))
            .sum();
        Ok(total / count(self.a.data().len()))
    }
}

/// CIELAB image: `L` in [0, 100], `a` and `b` in [-128, 127].
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage<T> {
    l: Plane<T>,
    chroma: ChromaPlanes<T>,
}

impl<T: Real> LabImage<T> {
    /// Builds an image from planes, clamping every value into the Lab ranges.
    pub fn from_planes(l: Plane<T>, a: Plane<T>, b: Plane<T>) -> Result<Self> {
        if l.dims() != a.dims() {
            return Err(Error::dims(l.dims(), a.dims()));
        }
        if l.dims() != b.dims() {
            return Err(Error::dims(l.dims(), b.dims()));
        }
        let (lo, hi, ab_lo, ab_hi) = (T::zero(), cst(L_MAX), cst(AB_MIN), cst(AB_MAX));
        Ok(Self {
            l: l.map(|v| v.max(lo).min(hi)),
            chroma: ChromaPlanes {
                a: a.map(|v| v.max(ab_lo).min(ab_hi)),
                b: b.map(|v| v.max(ab_lo).min(ab_hi)),
            },
        })
    }

    pub fn from_luma_chroma(l: Plane<T>, chroma: ChromaPlanes<T>) -> Result<Self> {
        Self::from_planes(l, chroma.a, chroma.b)
    }

    /// Luminance-only image with zero chroma.
    pub fn gray(l: Plane<T>) -> Result<Self> {
        let (w, h) = l.dims();
        Self::from_planes(
            l,
            Plane::filled(w, h, T::zero())?,
            Plane::filled(w, h, T::zero())?,
        )
    }

    pub fn width(&self) -> usize {
        self.l.width()
    }

    pub fn height(&self) -> usize {
        self.l.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.l.dims()
    }

    pub fn l(&self) -> &Plane<T> {
        &self.l
    }

    pub fn a(&self) -> &Plane<T> {
        &self.chroma.a
    }

    pub fn b(&self) -> &Plane<T> {
        &self.chroma.b
    }

    pub fn chroma(&self) -> &ChromaPlanes<T> {
        &self.chroma
    }

    pub fn into_parts(self) -> (Plane<T>, ChromaPlanes<T>) {
        (self.l, self.chroma)
    }
}

struct SrgbTable<T> {
    linear: [T; 256],
}

impl<T: Real> SrgbTable<T> {
    fn new() -> Self {
        let mut linear = [T::zero(); 256];
        for (v, slot) in linear.iter_mut().enumerate() {
            *slot = cst(srgb_decode(v as f64 / 255.0));
        }
        Self { linear }
    }
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode<T: Real>(c: T) -> T {
    if c <= cst(0.0031308) {
        c * cst(12.92)
    } else {
        c.powf(cst(1.0 / 2.4)) * cst(1.055) - cst(0.055)
    }
}

fn lab_f<T: Real>(t: T) -> T {
    if t > cst(LAB_EPSILON) {
        t.cbrt()
    } else {
        (t * cst(LAB_KAPPA) + cst(16.0)) / cst(116.0)
    }
}

fn lab_f_inv<T: Real>(f: T) -> T {
    let cube = f * f * f;
    if cube > cst(LAB_EPSILON) {
        cube
    } else {
        (f * cst(116.0) - cst(16.0)) / cst(LAB_KAPPA)
    }
}

/// Converts one 8-bit sRGB triple to Lab.
pub fn rgb_pixel_to_lab<T: Real>(rgb: [u8; 3]) -> [T; 3] {
    let lin = [rgb[0], rgb[1], rgb[2]].map(|c| cst::<T>(srgb_decode(c as f64 / 255.0)));
    linear_to_lab(lin, &white_point())
}

fn linear_to_lab<T: Real>(lin: [T; 3], white: &[f64; 3]) -> [T; 3] {
    let mut f = [T::zero(); 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let xyz = lin[0] * cst(row[0]) + lin[1] * cst(row[1]) + lin[2] * cst(row[2]);
        f[i] = lab_f(xyz / cst(white[i]));
    }
    let l = f[1] * cst(116.0) - cst(16.0);
    let a = (f[0] - f[1]) * cst(500.0);
    let b = (f[1] - f[2]) * cst(200.0);
    [
        l.max(T::zero()).min(cst(L_MAX)),
        a.max(cst(AB_MIN)).min(cst(AB_MAX)),
        b.max(cst(AB_MIN)).min(cst(AB_MAX)),
    ]
}

/// Converts a single Lab triple to 8-bit sRGB with gamut clamping.
pub fn lab_pixel_to_rgb<T: Real>(lab: [T; 3]) -> [u8; 3] {
    let white = white_point();
    let fy = (lab[0] + cst(16.0)) / cst(116.0);
    let fx = fy + lab[1] / cst(500.0);
    let fz = fy - lab[2] / cst(200.0);
    let xyz = [
        lab_f_inv(fx) * cst(white[0]),
        lab_f_inv(fy) * cst(white[1]),
        lab_f_inv(fz) * cst(white[2]),
    ];
    let mut out = [0u8; 3];
    for (i, row) in XYZ_TO_RGB.iter().enumerate() {
        let lin = xyz[0] * cst(row[0]) + xyz[1] * cst(row[1]) + xyz[2] * cst(row[2]);
        let lin = lin.max(T::zero()).min(T::one());
        let v = (srgb_encode(lin) * cst(255.0)).round();
        out[i] = v.max(T::zero()).min(cst(255.0)).to_u8().unwrap_or(0);
    }
    out
}

pub fn rgb_to_lab<T: Real>(img: &RgbImage) -> LabImage<T> {
    let table = SrgbTable::<T>::new();
    let white = white_point();
    let lab: Vec<[T; 3]> = img
        .pixels()
        .par_iter()
        .map(|p| {
            let lin = [
                table.linear[p[0] as usize],
                table.linear[p[1] as usize],
                table.linear[p[2] as usize],
            ];
            linear_to_lab(lin, &white)
        })
        .collect();
    let (w, h) = img.dims();
    let l = Plane::new(w, h, lab.iter().map(|p| p[0]).collect()).expect("valid dims");
    let a = Plane::new(w, h, lab.iter().map(|p| p[1]).collect()).expect("valid dims");
    let b = Plane::new(w, h, lab.iter().map(|p| p[2]).collect()).expect("valid dims");
    LabImage {
        l,
        chroma: ChromaPlanes { a, b },
    }
}

pub fn lab_to_rgb<T: Real>(img: &LabImage<T>) -> RgbImage {
    let (w, h) = img.dims();
    let pixels = (0..w * h)
        .into_par_iter()
        .map(|i| lab_pixel_to_rgb([img.l.data[i], img.chroma.a.data[i], img.chroma.b.data[i]]))
        .collect();
    RgbImage::new(w, h, pixels).expect("valid dims")
}

/// Luminance plane of an RGB image.
pub fn luminance<T: Real>(img: &RgbImage) -> Plane<T> {
    rgb_to_lab::<T>(img).into_parts().0
}

/// Keeps `luma` exactly and takes `a`/`b` from `chroma_source`.
pub fn replace_chroma<T: Real>(
    luma: &Plane<T>,
    chroma_source: &ChromaPlanes<T>,
) -> Result<LabImage<T>> {
    if luma.dims() != chroma_source.dims() {
        return Err(Error::dims(luma.dims(), chroma_source.dims()));
    }
    LabImage::from_planes(
        luma.clone(),
        chroma_source.a.clone(),
        chroma_source.b.clone(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }
}

/// Normalized per-channel value histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelHistogram<T> {
    mass: Vec<T>,
}

impl<T: Real> ChannelHistogram<T> {
    /// Normalizes nonnegative weights into a histogram.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::param("bins", "need at least 2 bins"));
        }
        if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
            return Err(Error::param("weights", "must be finite and nonnegative"));
        }
        let total: T = weights.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::param("weights", "total mass is zero"));
        }
        Ok(Self {
            mass: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }
}

/// Histogram of one RGB channel; value `v` falls in bin `floor(v * bins / 256)`.
pub fn channel_histogram<T: Real>(
    img: &RgbImage,
    channel: Channel,
    bins: usize,
) -> Result<ChannelHistogram<T>> {
    if bins < 2 {
        return Err(Error::param("bins", format!("need at least 2, got {bins}")));
    }
    let mut counts = vec![0usize; bins];
    let c = channel.index();
    for p in img.pixels() {
        counts[p[c] as usize * bins / 256] += 1;
    }
    let total = count::<T>(img.pixels().len());
    Ok(ChannelHistogram {
        mass: counts.into_iter().map(|n| count::<T>(n) / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab1(rgb: [u8; 3]) -> [f64; 3] {
        rgb_pixel_to_lab(rgb)
    }

    #[test]
    fn white_and_black() {
        let w = lab1([255, 255, 255]);
        assert!(
            (w[0] - 100.0).abs() < 0.01 && w[1].abs() < 0.01 && w[2].abs() < 0.01,
            "{w:?}"
        );
        let k = lab1([0, 0, 0]);
        assert!(k.iter().all(|v| v.abs() < 0.01), "{k:?}");
    }

    #[test]
    fn primaries_match_high_precision_oracle() {
        // 50-digit evaluation of the same sRGB -> XYZ(D65) -> Lab chain.
        let cases: [([u8; 3], [f64; 3]); 4] = [
            (
                [255, 0, 0],
                [53.240791833280888, 80.09246954480041, 67.203192536497274],
            ),
            (
                [0, 255, 0],
                [87.73471889497407, -86.182701516121498, 83.179314540932577],
            ),
            (
                [0, 0, 255],
                [32.297009322950471, 79.18752678434748, -107.8601645298382],
            ),
            (
                [128, 64, 200],
                [41.885320123118045, 53.523236848294704, -60.358327277985519],
            ),
        ];
        for (rgb, want) in cases {
            let got = lab1(rgb);
            for i in 0..3 {
                assert!(
                    (got[i] - want[i]).abs() < 1e-9,
                    "{rgb:?}: {got:?} vs {want:?}"
                );
            }
            let got32: [f32; 3] = rgb_pixel_to_lab(rgb);
            for i in 0..3 {
                assert!((got32[i] as f64 - want[i]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn gray_ramp_is_neutral_and_monotone() {
        let mut last = -1.0;
        for v in 0..=255u8 {
            let lab = lab1([v, v, v]);
            assert!(lab[0] > last);
            assert!(lab[1].abs() < 0.01 && lab[2].abs() < 0.01);
            last = lab[0];
        }
    }

    #[test]
    fn lattice_roundtrip_within_one() {
        let steps: Vec<u8> = (0..17).map(|i| (i * 255 / 16) as u8).collect();
        for &r in &steps {
            for &g in &steps {
                for &b in &steps {
                    let back = lab_pixel_to_rgb(lab1([r, g, b]));
                    for (x, y) in [r, g, b].iter().zip(back) {
                        assert!(
                            (*x as i32 - y as i32).abs() <= 1,
                            "{:?} -> {:?}",
                            [r, g, b],
                            back
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let rgb = lab_pixel_to_rgb([50.0f64, 127.0, -128.0]);
        assert_eq!(rgb.len(), 3);
        assert_eq!(lab_pixel_to_rgb([100.0f64, 0.0, 0.0]), [255, 255, 255]);
    }

    #[test]
    fn replace_chroma_composes_planes() {
        let img = RgbImage::from_fn(8, 4, |x, y| [(x * 30) as u8, (y * 50) as u8, 90]).unwrap();
        let lab = rgb_to_lab::<f64>(&img);
        let same = replace_chroma(lab.l(), lab.chroma()).unwrap();
        assert_eq!(same, lab);

        let other = rgb_to_lab::<f64>(&RgbImage::filled(8, 4, [200, 10, 10]).unwrap());
        let mixed = replace_chroma(lab.l(), other.chroma()).unwrap();
        assert_eq!(mixed.l(), lab.l());
        assert_eq!(mixed.a(), other.a());
        assert_eq!(mixed.b(), other.b());

        let neutral = ChromaPlanes::neutral(8, 4).unwrap();
        let gray = replace_chroma(lab.l(), &neutral).unwrap();
        assert!(gray
            .a()
            .data()
            .iter()
            .chain(gray.b().data())
            .all(|v| *v == 0.0));

        let small = ChromaPlanes::<f64>::neutral(4, 4).unwrap();
        assert!(matches!(
            replace_chroma(lab.l(), &small),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn histogram_basics() {
        let flat = RgbImage::filled(10, 10, [7, 7, 7]).unwrap();
        let h = channel_histogram::<f64>(&flat, Channel::G, 256).unwrap();
        assert_eq!(h.mass()[7], 1.0);

        let two = RgbImage::from_fn(10, 10, |x, _| if x < 5 { [0; 3] } else { [255; 3] }).unwrap();
        let h = channel_histogram::<f64>(&two, Channel::R, 4).unwrap();
        assert_eq!(h.mass(), &[0.5, 0.0, 0.0, 0.5]);

        assert!(channel_histogram::<f64>(&two, Channel::R, 1).is_err());
    }

    #[test]
    fn histogram_of_uniform_noise_is_flat() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let img = RgbImage::from_fn(256, 256, |_, _| [0, 0, 0]).unwrap();
        let pixels: Vec<[u8; 3]> = img
            .pixels()
            .iter()
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let img = RgbImage::new(256, 256, pixels).unwrap();
        for ch in Channel::ALL {
            let h = channel_histogram::<f64>(&img, ch, 256).unwrap();
            // direct count
            let mut counts = [0usize; 256];
            for p in img.pixels() {
                counts[p[ch.index()] as usize] += 1;
            }
            for (m, c) in h.mass().iter().zip(counts) {
                assert_eq!(*m, c as f64 / 65536.0);
                assert!((m - 1.0 / 256.0).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn resize_area_preserves_constants() {
        let p = Plane::filled(37, 23, 3.5f64).unwrap();
        let r = p.resize_area(16, 16).unwrap();
        assert!(r.data().iter().all(|v| (v - 3.5).abs() < 1e-12));
        let q = Plane::from_fn(8, 8, |x, y| (x + y) as f64).unwrap();
        let d = q.resize_area(4, 4).unwrap();
        assert!((d.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_sampling() {
        let p = Plane::new(2, 2, vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.sample_bilinear(0.5, 0.5), 1.5);
        assert_eq!(p.sample_bilinear(-4.0, 9.0), 2.0);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn histogram_sums_to_one_and_ignores_pixel_order(
            pixels in prop::collection::vec(any::<[u8; 3]>(), 1..200),
            bins in 2usize..300,
            rot in 0usize..200,
        ) {
            let n = pixels.len();
            let img = RgbImage::new(n, 1, pixels.clone()).unwrap();
            let mut shuffled = pixels;
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let img2 = RgbImage::new(1, n, shuffled).unwrap();
            for ch in Channel::ALL {
                let h = channel_histogram::<f64>(&img, ch, bins).unwrap();
                let total: f64 = h.mass().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(h.mass().iter().all(|m| *m >= 0.0));
                prop_assert_eq!(h, channel_histogram::<f64>(&img2, ch, bins).unwrap());
            }
        }

        #[test]
        fn lab_values_stay_in_range(rgb in any::<[u8; 3]>()) {
            let lab: [f64; 3] = rgb_pixel_to_lab(rgb);
            prop_assert!((0.0..=100.0).contains(&lab[0]));
            prop_assert!((-128.0..=127.0).contains(&lab[1]));
            prop_assert!((-128.0..=127.0).contains(&lab[2]));
        }
    }
}
