//! Orthographic Gaussian point splatting.
//!
//! Each vertex lands on the image plane and adds an isotropic Gaussian of
//! radius `sigma` pixels, scaled by its color. Per pixel the accumulation `A`
//! maps to `2·tanh(A) − 1`, so empty pixels read −1 and the output stays in
//! `[−1, 1]`. Pixel `(row, col)` has its center at `(col, row)`; the camera
//! center projects to `(W/2, H/2)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Result, Tensor, TensorError};
use crate::linalg::{self, Vec3};

/// Splats are cut off beyond this many sigmas.
const CUTOFF_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Camera {
    /// Viewing direction.
    pub view: Vec3,
    pub up: Vec3,
    /// World point imaged at the frame center.
    pub center: Vec3,
    /// Pixels per scene unit.
    pub scale: f64,
    pub width: usize,
    pub height: usize,
    /// Splat radius in pixels.
    pub sigma: f64,
}

impl Default for Camera {
    /// Side view of a one-unit character standing on y = 0.
    fn default() -> Self {
        Self::side_view(64)
    }
}

impl Camera {
    /// Square side view, 1.4 scene units across.
    pub fn side_view(size: usize) -> Self {
        Self {
            view: [1.0, 0.0, 0.0],
            up: [0.0, 1.0, 0.0],
            center: [0.0, 0.5, 0.0],
            scale: size as f64 / 1.4,
            width: size,
            height: size,
            sigma: 1.5 * size as f64 / 64.0,
        }
    }

    /// Frame size used when talking to the diffusion bridge.
    pub fn bridge() -> Self {
        Self::side_view(256)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let unit = |v: Vec3| (linalg::norm(v) - 1.0).abs() < 1e-9;
        if !unit(self.view) || !unit(self.up) || linalg::dot(self.view, self.up).abs() > 1e-9 {
            return Err("camera view and up must be orthonormal".into());
        }
        if self.width < 8 || self.height < 8 {
            return Err(format!("image must be at least 8×8, got {}×{}", self.width, self.height));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) || !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err("camera scale and sigma must be positive".into());
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err("camera center must be finite".into());
        }
        Ok(())
    }

    pub fn right(&self) -> Vec3 {
        linalg::cross(self.view, self.up)
    }

    /// Continuous pixel coordinates `(x, y)` of a world point.
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        let d = linalg::sub(p, self.center);
        let x = self.width as f64 / 2.0 + self.scale * linalg::dot(d, self.right());
        let y = self.height as f64 / 2.0 - self.scale * linalg::dot(d, self.up);
        (x, y)
    }
}

/// Rendered frames, `[T,C,H,W]` with values in `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub pixels: Tensor,
}

impl FrameSequence {
    pub fn new(pixels: Tensor) -> std::result::Result<Self, String> {
        if pixels.shape().len() != 4 {
            return Err(format!("frames must be [T,C,H,W], got {:?}", pixels.shape()));
        }
        if !matches!(pixels.shape()[1], 1 | 3) {
            return Err(format!("frames must have 1 or 3 channels, got {}", pixels.shape()[1]));
        }
        if pixels.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err("frame values must lie in [-1, 1]".into());
        }
        Ok(Self { pixels })
    }

    pub fn frames(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[3]
    }

    /// One `[C,H,W]` frame as plain values.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.channels() * self.height() * self.width();
        &self.pixels.data()[t * n..(t + 1) * n]
    }
}

struct SplatGrad {
    frames: usize,
    vertices: usize,
    channels: usize,
    width: usize,
    height: usize,
    sigma: f64,
    /// Projected `(x, y)` per frame and vertex.
    proj: Vec<(f64, f64)>,
    colors: Vec<f64>,
    /// `tanh(A)` per output element.
    squashed: Vec<f64>,
    dx_dp: Vec3,
    dy_dp: Vec3,
}

/// Pixel window touched by a splat centred at `(x, y)`.
fn window(x: f64, y: f64, sigma: f64, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let r = CUTOFF_SIGMAS * sigma;
    let (c0, c1) = ((x - r).ceil(), (x + r).floor());
    let (r0, r1) = ((y - r).ceil(), (y + r).floor());
    if c1 < 0.0 || r1 < 0.0 || c0 > (width - 1) as f64 || r0 > (height - 1) as f64 || !x.is_finite() || !y.is_finite() {
        return None;
    }
    Some((c0.max(0.0) as usize, (c1 as usize).min(width - 1), r0.max(0.0) as usize, (r1 as usize).min(height - 1)))
}

impl SplatGrad {
    /// Calls `f(frame, vertex, pixel, weight, dx, dy)` for every splat
    /// contribution inside the cutoff radius.
    fn visit(&self, mut f: impl FnMut(usize, usize, usize, f64, f64, f64)) {
        let cutoff2 = (CUTOFF_SIGMAS * self.sigma).powi(2);
        let inv2s2 = 1.0 / (2.0 * self.sigma * self.sigma);
        for t in 0..self.frames {
            for i in 0..self.vertices {
                let (x, y) = self.proj[t * self.vertices + i];
                let Some((c0, c1, r0, r1)) = window(x, y, self.sigma, self.width, self.height) else { continue };
                for row in r0..=r1 {
                    let dy = row as f64 - y;
                    for col in c0..=c1 {
                        let dx = col as f64 - x;
                        let d2 = dx * dx + dy * dy;
                        if d2 > cutoff2 {
                            continue;
                        }
                        f(t, i, row * self.width + col, (-d2 * inv2s2).exp(), dx, dy);
                    }
                }
            }
        }
    }
}

impl CustomOp for SplatGrad {
    fn backward(&self, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let plane = self.width * self.height;
        let mut grad = vec![0.0; self.frames * self.vertices * 3];
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        self.visit(|t, i, pix, w, dx, dy| {
            // d out / d A = 2 (1 − tanh²); d w / d x_proj = w·dx/σ²
            let mut g = 0.0;
            for c in 0..self.channels {
                let k = (t * self.channels + c) * plane + pix;
                let y = self.squashed[k];
                g += grad_out[k] * 2.0 * (1.0 - y * y) * self.colors[i * self.channels + c];
            }
            if g == 0.0 {
                return;
            }
            let (gx, gy) = (g * w * dx * inv_s2, g * w * dy * inv_s2);
            let base = (t * self.vertices + i) * 3;
            for a in 0..3 {
                grad[base + a] += gx * self.dx_dp[a] + gy * self.dy_dp[a];
            }
        });
        vec![grad]
    }
}

/// Renders `[T,V,3]` vertices. `colors` is `V×C` in `[0, 1]` (C = 1 or 3);
/// `None` renders a single white channel.
pub fn render(vertices: &Tensor, colors: Option<&[f64]>, channels: usize, cam: &Camera) -> Result<FrameSequence> {
    let invalid = |msg: String| TensorError::Invalid { op: "render", msg };
    cam.validate().map_err(invalid)?;
    let shape = vertices.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(invalid(format!("vertices must be [T,V,3], got {shape:?}")));
    }
    if !matches!(channels, 1 | 3) {
        return Err(invalid(format!("channels must be 1 or 3, got {channels}")));
    }
    if vertices.data().iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "render" });
    }
    let (t, v) = (shape[0], shape[1]);
    let colors = match colors {
        Some(c) if c.len() == v * channels => c.to_vec(),
        Some(c) => return Err(invalid(format!("{} color values for {v} vertices × {channels} channels", c.len()))),
        None => vec![1.0; v * channels],
    };
    let proj: Vec<(f64, f64)> = vertices.data().chunks(3).map(|p| cam.project([p[0], p[1], p[2]])).collect();
    let mut op = SplatGrad {
        frames: t,
        vertices: v,
        channels,
        width: cam.width,
        height: cam.height,
        sigma: cam.sigma,
        proj,
        colors,
        squashed: Vec::new(),
        dx_dp: linalg::scale(cam.right(), cam.scale),
        dy_dp: linalg::scale(cam.up, -cam.scale),
    };
    let plane = cam.width * cam.height;
    let mut acc = vec![0.0; t * channels * plane];
    op.visit(|f, i, pix, w, _, _| {
        for c in 0..channels {
            acc[(f * channels + c) * plane + pix] += op.colors[i * channels + c] * w;
        }
    });
    op.squashed = acc.iter().map(|a| a.tanh()).collect();
    let data = op.squashed.iter().map(|y| 2.0 * y - 1.0).collect();
    let out_shape = vec![t, channels, cam.height, cam.width];
    let pixels =
        if vertices.is_tracked() { Tensor::custom(&[vertices], out_shape, data, Box::new(op))? } else { Tensor::new(out_shape, data)? };
    Ok(FrameSequence { pixels })
}
