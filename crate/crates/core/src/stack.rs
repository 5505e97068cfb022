//! Image-stack data model, tensor/matrix flattening and intensity normalization.

use crate::error::{Error, Result};

/// A dense row-major 2D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Grid<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "grid {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Grid { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StackMeta {
    /// Bit depth of the file the stack was decoded from, if any.
    pub bit_depth: Option<u8>,
    pub pixel_size_nm: Option<f64>,
}

/// Ordered sequence of equally sized, finite, non-negative intensity frames.
///
/// Frames are stored contiguously in single precision, each in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<f32>,
    meta: StackMeta,
}

impl ImageStack {
    pub fn new(width: usize, height: usize, data: Vec<f32>, meta: StackMeta) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("frame dimensions"));
        }
        let px = width * height;
        if !data.len().is_multiple_of(px) {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of {}x{} frames",
                data.len(),
                width,
                height
            )));
        }
        for &v in &data {
            if !v.is_finite() {
                return Err(Error::NonFinite("image stack"));
            }
            if v < 0.0 {
                return Err(Error::Negative("image stack"));
            }
        }
        Ok(ImageStack {
            width,
            height,
            frames: data.len() / px,
            data,
            meta,
        })
    }

    pub fn from_frames(frames: &[Grid<f32>], meta: StackMeta) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("frame list"))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(w * h * frames.len());
        for (i, f) in frames.iter().enumerate() {
            if f.width() != w || f.height() != h {
                return Err(Error::Shape(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    i,
                    f.width(),
                    f.height(),
                    w,
                    h
                )));
            }
            data.extend_from_slice(f.data());
        }
        ImageStack::new(w, h, data, meta)
    }

    pub fn zeros(width: usize, height: usize, frames: usize) -> Self {
        ImageStack {
            width,
            height,
            frames,
            data: vec![0.0; width * height * frames],
            meta: StackMeta::default(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    pub fn meta(&self) -> StackMeta {
        self.meta
    }

    pub fn with_meta(mut self, meta: StackMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let px = self.pixels_per_frame();
        &self.data[i * px..(i + 1) * px]
    }

    pub fn frame_grid(&self, i: usize) -> Grid<f32> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.frame(i).to_vec(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.pixels_per_frame())
    }

    /// Frames `start..end` as a new stack.
    pub fn slice(&self, start: usize, end: usize) -> Result<ImageStack> {
        if start >= end || end > self.frames {
            return Err(Error::param(format!(
                "frame range {}..{} out of 0..{}",
                start, end, self.frames
            )));
        }
        let px = self.pixels_per_frame();
        Ok(ImageStack {
            width: self.width,
            height: self.height,
            frames: end - start,
            data: self.data[start * px..end * px].to_vec(),
            meta: self.meta,
        })
    }

    /// Frames at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<ImageStack> {
        if indices.is_empty() {
            return Err(Error::Empty("frame selection"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.pixels_per_frame());
        for &i in indices {
            if i >= self.frames {
                return Err(Error::param(format!("frame {} out of 0..{}", i, self.frames)));
            }
            data.extend_from_slice(self.frame(i));
        }
        Ok(ImageStack {
            width: self.width,
            height: self.height,
            frames: indices.len(),
            data,
            meta: self.meta,
        })
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

/// A k x (m*n) double-precision matrix; row i is frame i in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// (k, m, n) = (frames, height, width) for un-flattening.
    shape: (usize, usize, usize),
}

impl FlatMatrix {
    /// A plain matrix whose shape record treats each row as a 1 x cols frame.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(FlatMatrix {
            rows,
            cols,
            data,
            shape: (rows, 1, cols),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FlatMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            shape: (rows, 1, cols),
        }
    }

    pub fn with_shape(mut self, frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames != self.rows || height * width != self.cols {
            return Err(Error::Shape(format!(
                "shape ({}, {}, {}) does not match a {}x{} matrix",
                frames, height, width, self.rows, self.cols
            )));
        }
        self.shape = (frames, height, width);
        Ok(self)
    }

    /// Same shape record, new values.
    pub fn like(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len());
        FlatMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
            shape: self.shape,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &FlatMatrix) -> Result<FlatMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &FlatMatrix) -> Result<FlatMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> FlatMatrix {
        self.like(self.data.iter().map(|v| v * c).collect())
    }

    fn zip_with(&self, other: &FlatMatrix, f: impl Fn(f64, f64) -> f64) -> Result<FlatMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.like(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }
}

/// Rearranges a k-frame window into a k x (m*n) matrix, one frame per row.
pub fn flatten(window: &ImageStack) -> Result<FlatMatrix> {
    if window.is_empty() {
        return Err(Error::Empty("window"));
    }
    let data = window.data().iter().map(|&v| v as f64).collect();
    FlatMatrix::new(window.len(), window.pixels_per_frame(), data)?.with_shape(
        window.len(),
        window.height(),
        window.width(),
    )
}

/// Inverse of [`flatten`]. Fails if the matrix holds values an [`ImageStack`]
/// cannot (negative or non-finite); clamp first when converting solver output.
pub fn unflatten(m: &FlatMatrix) -> Result<ImageStack> {
    let (_, height, width) = m.shape();
    let data = m.data().iter().map(|&v| v as f32).collect();
    ImageStack::new(width, height, data, StackMeta::default())
}

/// Like [`unflatten`] but clamps negative entries to zero.
pub fn unflatten_clamped(m: &FlatMatrix) -> Result<ImageStack> {
    let (_, height, width) = m.shape();
    let data = m.data().iter().map(|&v| v.max(0.0) as f32).collect();
    ImageStack::new(width, height, data, StackMeta::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the global maximum.
    #[default]
    MaxScale,
    None,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::MaxScale => "max",
            Normalization::None => "none",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "max-scale" => Ok(Normalization::MaxScale),
            "none" => Ok(Normalization::None),
            other => Err(Error::param(format!("unknown normalization '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub method: Normalization,
    pub scale: f64,
    pub offset: f64,
    /// Every source value was an integer; denormalization rounds back to integers.
    pub integer_origin: bool,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        NormalizationRecord {
            method: Normalization::None,
            scale: 1.0,
            offset: 0.0,
            integer_origin: false,
        }
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.offset) / self.scale
    }

    #[inline]
    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }
}

pub fn normalize(stack: &ImageStack, method: Normalization) -> Result<(ImageStack, NormalizationRecord)> {
    if stack.is_empty() {
        return Err(Error::Empty("stack"));
    }
    let integer_origin = stack.data().iter().all(|v| v.fract() == 0.0);
    match method {
        Normalization::None => Ok((
            stack.clone(),
            NormalizationRecord {
                integer_origin,
                ..NormalizationRecord::identity()
            },
        )),
        Normalization::MaxScale => {
            let max = stack.max_value();
            if max <= 0.0 {
                return Err(Error::Degenerate("max-scale normalization of an all-zero stack".into()));
            }
            let rec = NormalizationRecord {
                method,
                scale: max as f64,
                offset: 0.0,
                integer_origin,
            };
            let data = stack.data().iter().map(|&v| rec.apply(v as f64) as f32).collect();
            let out = ImageStack::new(stack.width(), stack.height(), data, stack.meta())?;
            Ok((out, rec))
        }
    }
}

pub fn denormalize(stack: &ImageStack, rec: &NormalizationRecord) -> Result<ImageStack> {
    let data = stack
        .data()
        .iter()
        .map(|&v| {
            let x = rec.invert(v as f64);
            if rec.integer_origin {
                x.round() as f32
            } else {
                x as f32
            }
        })
        .collect();
    ImageStack::new(stack.width(), stack.height(), data, stack.meta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack_of(w: usize, h: usize, data: Vec<f32>) -> ImageStack {
        ImageStack::new(w, h, data, StackMeta::default()).unwrap()
    }

    #[test]
    fn flatten_is_row_major() {
        let s = stack_of(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let f = flatten(&s).unwrap();
        assert_eq!((f.rows(), f.cols()), (1, 4));
        assert_eq!(f.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.shape(), (1, 2, 2));
    }

    #[test]
    fn flatten_row_sums_match_frame_sums() {
        let data: Vec<f32> = (0..3 * 64 * 64).map(|i| ((i * 37) % 251) as f32).collect();
        let s = stack_of(64, 64, data);
        let f = flatten(&s).unwrap();
        assert_eq!((f.rows(), f.cols()), (3, 4096));
        for k in 0..3 {
            let mut direct = 0.0f64;
            for y in 0..64 {
                for x in 0..64 {
                    direct += s.frame(k)[y * 64 + x] as f64;
                }
            }
            assert_eq!(f.row(k).iter().sum::<f64>(), direct);
        }
    }

    #[test]
    fn flatten_unflatten_bijective_small_shapes() {
        for k in 1..=4 {
            for m in 1..=4 {
                for n in 1..=4 {
                    let data: Vec<f32> = (0..k * m * n).map(|i| i as f32 * 0.5).collect();
                    let s = stack_of(n, m, data);
                    let f = flatten(&s).unwrap();
                    assert_eq!(f.shape(), (k, m, n));
                    assert_eq!(unflatten(&f).unwrap(), s);
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_stacks() {
        assert!(matches!(
            ImageStack::new(2, 2, vec![0.0, -1.0, 0.0, 0.0], StackMeta::default()),
            Err(Error::Negative(_))
        ));
        assert!(matches!(
            ImageStack::new(2, 2, vec![0.0, f32::NAN, 0.0, 0.0], StackMeta::default()),
            Err(Error::NonFinite(_))
        ));
        assert!(ImageStack::new(2, 2, vec![0.0; 5], StackMeta::default()).is_err());
        let empty = ImageStack::new(2, 2, vec![], StackMeta::default()).unwrap();
        assert!(matches!(flatten(&empty), Err(Error::Empty(_))));
    }

    #[test]
    fn max_scale_of_constant() {
        let s = stack_of(3, 2, vec![10.0; 12]);
        let (n, rec) = normalize(&s, Normalization::MaxScale).unwrap();
        assert!(n.data().iter().all(|&v| v == 1.0));
        assert_eq!(rec.scale, 10.0);
    }

    #[test]
    fn none_is_identity() {
        let s = stack_of(2, 1, vec![3.5, 7.0]);
        let (n, rec) = normalize(&s, Normalization::None).unwrap();
        assert_eq!(n, s);
        assert_eq!(rec.scale, 1.0);
    }

    #[test]
    fn all_zero_max_scale_errors() {
        let s = stack_of(2, 2, vec![0.0; 4]);
        assert!(matches!(
            normalize(&s, Normalization::MaxScale),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn integer_data_restores_exactly() {
        let data: Vec<f32> = (0..400).map(|i| ((i * 71) % 313) as f32).collect();
        let s = stack_of(20, 20, data);
        assert_eq!(s.max_value(), 312.0);
        let (n, rec) = normalize(&s, Normalization::MaxScale).unwrap();
        assert!(n.data().iter().all(|&v| v <= 1.0));
        assert_eq!(denormalize(&n, &rec).unwrap(), s);
    }

    fn ulp_distance(a: f32, b: f32) -> u32 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs() as u32
    }

    proptest! {
        #[test]
        fn normalize_round_trip_within_one_ulp(values in proptest::collection::vec(0.0f32..1e6, 1..200)) {
            let mut values = values;
            values[0] += 0.25; // keep at least one non-integer, positive value
            let s = stack_of(values.len(), 1, values);
            let (n, rec) = normalize(&s, Normalization::MaxScale).unwrap();
            let back = denormalize(&n, &rec).unwrap();
            for (&a, &b) in s.data().iter().zip(back.data()) {
                prop_assert!(ulp_distance(a, b) <= 1, "{} vs {}", a, b);
            }
        }

        #[test]
        fn normalize_preserves_sign(values in proptest::collection::vec(prop_oneof![Just(0.0f32), 1e-3f32..100.0], 1..100)) {
            let s = stack_of(values.len(), 1, values);
            if s.max_value() > 0.0 {
                let (n, _) = normalize(&s, Normalization::MaxScale).unwrap();
                for (&a, &b) in s.data().iter().zip(n.data()) {
                    prop_assert_eq!(a > 0.0, b > 0.0);
                }
            }
        }
    }
}
