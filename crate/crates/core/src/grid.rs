//! Grid geometry: volumes, displacement fields, interpolation and warping.
//!
//! All grids are stored with axis 0 slowest (`D, H, W`). Displacements are
//! expressed in voxel units of the grid they live on; a field with
//! `grid_scale = s` has nodes at full-resolution coordinates `s * i`, so the
//! physical displacement of a node is `value * s * spacing`. Out-of-bounds
//! samples clamp to the nearest edge voxel.

use crate::error::{Error, Result};

pub type Shape = [usize; 3];

/// Number of nodes in a grid of the given shape.
#[inline]
pub fn numel(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[inline]
pub(crate) fn lin(shape: Shape, i: usize, j: usize, k: usize) -> usize {
    (i * shape[1] + j) * shape[2] + k
}

#[inline]
pub(crate) fn unlin(shape: Shape, n: usize) -> [usize; 3] {
    let k = n % shape[2];
    let j = (n / shape[2]) % shape[1];
    let i = n / (shape[1] * shape[2]);
    [i, j, k]
}

fn check_shape(shape: Shape) -> Result<()> {
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidInput(format!(
            "grid dimensions must be >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

fn spacing_matches(a: [f64; 3], b: [f64; 3]) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(y.abs()))
}

/// Interpolation cell along one axis: lower index, upper index, fraction, and
/// whether the coordinate was clamped (zero derivative).
#[inline]
fn axis_cell(n: usize, x: f64) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, true);
    }
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&x);
    let x = x.clamp(0.0, max);
    let lo = (x.floor() as usize).min(n - 2);
    (lo, lo + 1, x - lo as f64, clamped)
}

/// Trilinear interpolation with clamp-to-edge; `get` reads a linear index.
#[inline]
pub(crate) fn trilinear<F: Fn(usize) -> f64>(shape: Shape, p: [f64; 3], get: F) -> f64 {
    let (a0, a1, ta, _) = axis_cell(shape[0], p[0]);
    let (b0, b1, tb, _) = axis_cell(shape[1], p[1]);
    let (c0, c1, tc, _) = axis_cell(shape[2], p[2]);
    let v = |i, j, k| get(lin(shape, i, j, k));
    // `a + t (b − a)` reproduces equal corners exactly, so constant fields stay constant.
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let c00 = lerp(v(a0, b0, c0), v(a0, b0, c1), tc);
    let c01 = lerp(v(a0, b1, c0), v(a0, b1, c1), tc);
    let c10 = lerp(v(a1, b0, c0), v(a1, b0, c1), tc);
    let c11 = lerp(v(a1, b1, c0), v(a1, b1, c1), tc);
    lerp(lerp(c00, c01, tb), lerp(c10, c11, tb), ta)
}

/// Trilinear interpolation and its derivative with respect to the sample position.
#[inline]
pub(crate) fn trilinear_grad<F: Fn(usize) -> f64>(
    shape: Shape,
    p: [f64; 3],
    get: F,
) -> (f64, [f64; 3]) {
    let (a0, a1, ta, ca) = axis_cell(shape[0], p[0]);
    let (b0, b1, tb, cb) = axis_cell(shape[1], p[1]);
    let (c0, c1, tc, cc) = axis_cell(shape[2], p[2]);
    let v = |i, j, k| get(lin(shape, i, j, k));
    let corners = [
        [
            [v(a0, b0, c0), v(a0, b0, c1)],
            [v(a0, b1, c0), v(a0, b1, c1)],
        ],
        [
            [v(a1, b0, c0), v(a1, b0, c1)],
            [v(a1, b1, c0), v(a1, b1, c1)],
        ],
    ];
    let wa = [1.0 - ta, ta];
    let wb = [1.0 - tb, tb];
    let wc = [1.0 - tc, tc];
    let sgn = [-1.0, 1.0];
    let mut val = 0.0;
    let mut g = [0.0; 3];
    for x in 0..2 {
        for y in 0..2 {
            for z in 0..2 {
                let c = corners[x][y][z];
                val += wa[x] * wb[y] * wc[z] * c;
                g[0] += sgn[x] * wb[y] * wc[z] * c;
                g[1] += wa[x] * sgn[y] * wc[z] * c;
                g[2] += wa[x] * wb[y] * sgn[z] * c;
            }
        }
    }
    if ca {
        g[0] = 0.0;
    }
    if cb {
        g[1] = 0.0;
    }
    if cc {
        g[2] = 0.0;
    }
    (val, g)
}

/// A scalar 3D image on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: Shape,
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: Shape, spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_shape(shape)?;
        check_spacing(spacing)?;
        if data.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "volume data has {} values, shape {shape:?} needs {}",
                data.len(),
                numel(shape)
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "volume contains non-finite values".into(),
            ));
        }
        Ok(Self {
            shape,
            spacing,
            data,
        })
    }

    pub fn zeros(shape: Shape, spacing: [f64; 3]) -> Result<Self> {
        Self::new(shape, spacing, vec![0.0; numel(shape)])
    }

    pub fn from_fn(
        shape: Shape,
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(numel(shape));
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(shape, spacing, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[lin(self.shape, i, j, k)]
    }

    /// Trilinear sample at a continuous voxel coordinate, clamped to the edge.
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        trilinear(self.shape, p, |n| self.data[n] as f64)
    }
}

/// An integer label map (0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    shape: Shape,
    spacing: [f64; 3],
    data: Vec<u16>,
}

impl LabelVolume {
    pub fn new(shape: Shape, spacing: [f64; 3], data: Vec<u16>) -> Result<Self> {
        check_shape(shape)?;
        check_spacing(spacing)?;
        if data.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "label data has {} values, shape {shape:?} needs {}",
                data.len(),
                numel(shape)
            )));
        }
        Ok(Self {
            shape,
            spacing,
            data,
        })
    }

    pub fn from_fn(
        shape: Shape,
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> u16,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(numel(shape));
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(shape, spacing, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// Largest label present (the class count `C`).
    pub fn num_classes(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Nearest-neighbour sample with clamp-to-edge.
    #[inline]
    pub fn sample_nearest(&self, p: [f64; 3]) -> u16 {
        let mut ix = [0usize; 3];
        for a in 0..3 {
            let max = (self.shape[a] - 1) as f64;
            ix[a] = (p[a].clamp(0.0, max) + 0.5).floor().min(max) as usize;
        }
        self.data[lin(self.shape, ix[0], ix[1], ix[2])]
    }
}

/// A 3-vector displacement per grid node, stored component-major `(3, d, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    shape: Shape,
    spacing: [f64; 3],
    grid_scale: usize,
    data: Vec<f64>,
}

pub const GRID_SCALES: [usize; 4] = [1, 2, 4, 8];

impl DisplacementField {
    /// `spacing` is the full-resolution voxel size in mm.
    pub fn new(shape: Shape, spacing: [f64; 3], grid_scale: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        check_spacing(spacing)?;
        if !GRID_SCALES.contains(&grid_scale) {
            return Err(Error::InvalidInput(format!(
                "grid_scale must be one of {GRID_SCALES:?}, got {grid_scale}"
            )));
        }
        if data.len() != 3 * numel(shape) {
            return Err(Error::Shape(format!(
                "field data has {} values, shape {shape:?} needs {}",
                data.len(),
                3 * numel(shape)
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "field contains non-finite values".into(),
            ));
        }
        Ok(Self {
            shape,
            spacing,
            grid_scale,
            data,
        })
    }

    pub fn zeros(shape: Shape, spacing: [f64; 3], grid_scale: usize) -> Result<Self> {
        Self::new(shape, spacing, grid_scale, vec![0.0; 3 * numel(shape)])
    }

    pub fn constant(
        shape: Shape,
        spacing: [f64; 3],
        grid_scale: usize,
        v: [f64; 3],
    ) -> Result<Self> {
        Self::from_fn(shape, spacing, grid_scale, |_| v)
    }

    pub fn from_fn(
        shape: Shape,
        spacing: [f64; 3],
        grid_scale: usize,
        mut f: impl FnMut([usize; 3]) -> [f64; 3],
    ) -> Result<Self> {
        let n = numel(shape);
        let mut data = vec![0.0; 3 * n];
        for node in 0..n {
            let v = f(unlin(shape, node));
            for c in 0..3 {
                data[c * n + node] = v[c];
            }
        }
        Self::new(shape, spacing, grid_scale, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn grid_scale(&self) -> usize {
        self.grid_scale
    }

    pub fn numel(&self) -> usize {
        numel(self.shape)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.numel();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, node: usize) -> [f64; 3] {
        let n = self.numel();
        [
            self.data[node],
            self.data[n + node],
            self.data[2 * n + node],
        ]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.at(lin(self.shape, i, j, k))
    }

    #[inline]
    pub fn set(&mut self, node: usize, v: [f64; 3]) {
        let n = self.numel();
        for (c, x) in v.into_iter().enumerate() {
            self.data[c * n + node] = x;
        }
    }

    /// Trilinear sample at a continuous coordinate of this field's grid.
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        let n = self.numel();
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let comp = &self.data[c * n..(c + 1) * n];
            *o = trilinear(self.shape, p, |m| comp[m]);
        }
        out
    }

    /// Displacement of one node in mm.
    #[inline]
    pub fn physical(&self, node: usize) -> [f64; 3] {
        let v = self.at(node);
        let s = self.grid_scale as f64;
        [
            v[0] * s * self.spacing[0],
            v[1] * s * self.spacing[1],
            v[2] * s * self.spacing[2],
        ]
    }

    /// Mean Euclidean norm of the displacement in mm.
    pub fn mean_norm_mm(&self) -> f64 {
        let n = self.numel();
        (0..n)
            .map(|m| {
                let p = self.physical(m);
                (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
            })
            .sum::<f64>()
            / n as f64
    }

    pub fn same_grid(&self, other: &DisplacementField) -> bool {
        self.shape == other.shape && self.grid_scale == other.grid_scale
    }

    fn ensure_same_grid(&self, other: &DisplacementField, op: &str) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::Shape(format!(
                "{op}: fields on different grids ({:?}@{} vs {:?}@{})",
                self.shape, self.grid_scale, other.shape, other.grid_scale
            )));
        }
        Ok(())
    }

    /// Per-node linear combination `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &DisplacementField, b: f64) -> Result<DisplacementField> {
        self.ensure_same_grid(other, "axpby")?;
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(other.data.iter()) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }
}

/// Samples `vol` at `x + field(x)`; the field is upsampled to the volume grid first.
pub fn warp_volume(vol: &Volume, field: &DisplacementField) -> Result<Volume> {
    let dense = dense_on(field, vol.shape, vol.spacing)?;
    let shape = vol.shape;
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    for node in 0..n {
        let [i, j, k] = unlin(shape, node);
        let d = dense.at(node);
        let p = [i as f64 + d[0], j as f64 + d[1], k as f64 + d[2]];
        out.push(vol.sample(p) as f32);
    }
    Volume::new(shape, vol.spacing, out)
}

/// Nearest-neighbour counterpart of [`warp_volume`] for label maps.
pub fn warp_labels(lab: &LabelVolume, field: &DisplacementField) -> Result<LabelVolume> {
    let dense = dense_on(field, lab.shape, lab.spacing)?;
    let shape = lab.shape;
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    for node in 0..n {
        let [i, j, k] = unlin(shape, node);
        let d = dense.at(node);
        out.push(lab.sample_nearest([i as f64 + d[0], j as f64 + d[1], k as f64 + d[2]]));
    }
    LabelVolume::new(shape, lab.spacing, out)
}

fn dense_on(
    field: &DisplacementField,
    shape: Shape,
    spacing: [f64; 3],
) -> Result<std::borrow::Cow<'_, DisplacementField>> {
    if !spacing_matches(field.spacing, spacing) {
        return Err(Error::Shape(format!(
            "field spacing {:?} does not match volume spacing {spacing:?}",
            field.spacing
        )));
    }
    let dense = if field.grid_scale == 1 && field.shape == shape {
        std::borrow::Cow::Borrowed(field)
    } else {
        std::borrow::Cow::Owned(upsample_field(field, shape)?)
    };
    if dense.shape != shape || dense.grid_scale != 1 {
        return Err(Error::Shape(format!(
            "field {:?}@{} cannot be brought onto volume grid {shape:?}",
            field.shape, field.grid_scale
        )));
    }
    Ok(dense)
}

/// `result(x) = inner(x) + outer(x + inner(x))`, with `outer` sampled trilinearly.
pub fn compose_fields(
    outer: &DisplacementField,
    inner: &DisplacementField,
) -> Result<DisplacementField> {
    outer.ensure_same_grid(inner, "compose_fields")?;
    let shape = inner.shape;
    let n = numel(shape);
    let mut out = inner.clone();
    for node in 0..n {
        let [i, j, k] = unlin(shape, node);
        let u = inner.at(node);
        let w = outer.sample([i as f64 + u[0], j as f64 + u[1], k as f64 + u[2]]);
        out.set(node, [u[0] + w[0], u[1] + w[1], u[2] + w[2]]);
    }
    Ok(out)
}

/// Trilinear upsampling by a uniform integer factor; values are rescaled so the
/// physical displacement is preserved.
pub fn upsample_field(field: &DisplacementField, target_shape: Shape) -> Result<DisplacementField> {
    let mut factor = None;
    for a in 0..3 {
        let (n, t) = (field.shape[a], target_shape[a]);
        if t % n != 0 {
            return Err(Error::Shape(format!(
                "upsample: target {target_shape:?} is not an integer multiple of {:?}",
                field.shape
            )));
        }
        let f = t / n;
        match factor {
            None => factor = Some(f),
            Some(g) if g != f => {
                return Err(Error::Shape(format!(
                    "upsample: non-uniform factors for {:?} -> {target_shape:?}",
                    field.shape
                )))
            }
            _ => {}
        }
    }
    let f = factor.unwrap_or(1);
    if f == 1 {
        return Ok(field.clone());
    }
    if field.grid_scale % f != 0 {
        return Err(Error::Shape(format!(
            "upsample: factor {f} exceeds grid_scale {}",
            field.grid_scale
        )));
    }
    let ff = f as f64;
    let out = DisplacementField::from_fn(
        target_shape,
        field.spacing,
        field.grid_scale / f,
        |[i, j, k]| {
            let v = field.sample([i as f64 / ff, j as f64 / ff, k as f64 / ff]);
            [v[0] * ff, v[1] * ff, v[2] * ff]
        },
    )?;
    Ok(out)
}

/// Subsamples every `factor`-th node (the exact inverse of [`upsample_field`] at coarse nodes).
pub fn downsample_field(field: &DisplacementField, factor: usize) -> Result<DisplacementField> {
    if factor == 0 || field.shape.iter().any(|n| n % factor != 0) {
        return Err(Error::Shape(format!(
            "downsample: shape {:?} not divisible by {factor}",
            field.shape
        )));
    }
    if factor == 1 {
        return Ok(field.clone());
    }
    let shape = [
        field.shape[0] / factor,
        field.shape[1] / factor,
        field.shape[2] / factor,
    ];
    let ff = factor as f64;
    DisplacementField::from_fn(
        shape,
        field.spacing,
        field.grid_scale * factor,
        |[i, j, k]| {
            let v = field.get(i * factor, j * factor, k * factor);
            [v[0] / ff, v[1] / ff, v[2] / ff]
        },
    )
}

/// `x -> matrix * x + offset`, acting on full-resolution voxel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    matrix: [[f64; 3]; 3],
    offset: [f64; 3],
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl AffineTransform {
    pub fn new(matrix: [[f64; 3]; 3], offset: [f64; 3]) -> Result<Self> {
        if det3(&matrix).abs() <= 1e-8
            || matrix
                .iter()
                .flatten()
                .chain(offset.iter())
                .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "singular affine matrix {matrix:?}"
            )));
        }
        Ok(Self { matrix, offset })
    }

    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            offset: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            offset: t,
            ..Self::identity()
        }
    }

    /// Linear map about the centre of a grid, followed by a translation.
    pub fn about_center(
        linear: [[f64; 3]; 3],
        translation: [f64; 3],
        shape: Shape,
    ) -> Result<Self> {
        let c = [
            (shape[0] as f64 - 1.0) / 2.0,
            (shape[1] as f64 - 1.0) / 2.0,
            (shape[2] as f64 - 1.0) / 2.0,
        ];
        let mut offset = [0.0; 3];
        for i in 0..3 {
            let lc: f64 = (0..3).map(|l| linear[i][l] * c[l]).sum();
            offset[i] = c[i] - lc + translation[i];
        }
        Self::new(linear, offset)
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.matrix
    }

    pub fn offset(&self) -> [f64; 3] {
        self.offset
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.matrix)
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + self.offset[0],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + self.offset[1],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + self.offset[2],
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.matrix;
        let det = det3(m);
        if det.abs() <= 1e-8 {
            return Err(Error::InvalidInput("cannot invert singular affine".into()));
        }
        let mut inv = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                // adjugate: cofactor of (j, i)
                let (r0, r1) = match j {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let (c0, c1) = match i {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[i][j] = sign * minor / det;
            }
        }
        let mut offset = [0.0; 3];
        for i in 0..3 {
            offset[i] = -(0..3).map(|l| inv[i][l] * self.offset[l]).sum::<f64>();
        }
        Ok(Self {
            matrix: inv,
            offset,
        })
    }
}

/// `out(x) = vol(A x + offset)`, trilinear with clamp-to-edge.
pub fn apply_affine(vol: &Volume, a: &AffineTransform) -> Volume {
    let shape = vol.shape;
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    for node in 0..n {
        let [i, j, k] = unlin(shape, node);
        out.push(vol.sample(a.apply([i as f64, j as f64, k as f64])) as f32);
    }
    Volume {
        shape,
        spacing: vol.spacing,
        data: out,
    }
}

/// Nearest-neighbour counterpart of [`apply_affine`].
pub fn apply_affine_labels(lab: &LabelVolume, a: &AffineTransform) -> LabelVolume {
    let shape = lab.shape;
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    for node in 0..n {
        let [i, j, k] = unlin(shape, node);
        out.push(lab.sample_nearest(a.apply([i as f64, j as f64, k as f64])));
    }
    LabelVolume {
        shape,
        spacing: lab.spacing,
        data: out,
    }
}

/// Carries a correspondence field into the frame of an affinely augmented pair.
///
/// For `F' = F∘A_F` and `M' = M∘A_M`, returns
/// `φ'(x) = A_M⁻¹(A_F(x) + φ(A_F(x))) − x`, evaluated at the field's own nodes.
pub fn transform_field_for_affine_pair(
    field: &DisplacementField,
    a_f: &AffineTransform,
    a_m: &AffineTransform,
) -> Result<DisplacementField> {
    let a_m_inv = a_m.inverse()?;
    let s = field.grid_scale as f64;
    DisplacementField::from_fn(field.shape, field.spacing, field.grid_scale, |[i, j, k]| {
        let x = [i as f64 * s, j as f64 * s, k as f64 * s];
        let y = a_f.apply(x);
        let u = field.sample([y[0] / s, y[1] / s, y[2] / s]);
        let w = a_m_inv.apply([y[0] + u[0] * s, y[1] + u[1] * s, y[2] + u[2] * s]);
        [(w[0] - x[0]) / s, (w[1] - x[1]) / s, (w[2] - x[2]) / s]
    })
}

/// Derivative of `comp` along `axis` at a node: central inside, one-sided at borders.
#[inline]
fn axis_diff(comp: &[f64], shape: Shape, idx: [usize; 3], axis: usize) -> f64 {
    let n = shape[axis];
    if n == 1 {
        return 0.0;
    }
    let mut lo = idx;
    let mut hi = idx;
    let (l, h) = if idx[axis] == 0 {
        (0, 1)
    } else if idx[axis] == n - 1 {
        (n - 2, n - 1)
    } else {
        (idx[axis] - 1, idx[axis] + 1)
    };
    lo[axis] = l;
    hi[axis] = h;
    let span = (h - l) as f64;
    (comp[lin(shape, hi[0], hi[1], hi[2])] - comp[lin(shape, lo[0], lo[1], lo[2])]) / span
}

/// `det(I + ∇φ)` per node, derivatives taken in the field's own grid units.
pub fn jacobian_determinant(field: &DisplacementField) -> Vec<f64> {
    let shape = field.shape;
    let n = numel(shape);
    let comps = [field.component(0), field.component(1), field.component(2)];
    (0..n)
        .map(|node| {
            let idx = unlin(shape, node);
            let mut j = [[0.0; 3]; 3];
            for (c, comp) in comps.iter().enumerate() {
                for a in 0..3 {
                    j[c][a] = axis_diff(comp, shape, idx, a) + if c == a { 1.0 } else { 0.0 };
                }
            }
            det3(&j)
        })
        .collect()
}
