//! Network definitions over the tape.

use super::graph::{Graph, Var};
use super::params::{NetworkParams, GEOMETRY_INPUT, POSE_INPUT, TEXTURE_INPUT};
use super::tensor::{FeatureMap, Provenance, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::ImageBuf;

fn conv<T: Real>(g: &mut Graph<'_, T>, x: Var, name: &str, stride: usize) -> Result<Var> {
    let w = g.param(&format!("{name}.w"))?;
    let b = g.param(&format!("{name}.b"))?;
    let k = g.shape(w)[2];
    g.conv2d(x, w, b, stride, k / 2)
}

fn conv_relu<T: Real>(g: &mut Graph<'_, T>, x: Var, name: &str, stride: usize) -> Result<Var> {
    let y = conv(g, x, name, stride)?;
    Ok(g.relu(y))
}

fn up_relu<T: Real>(g: &mut Graph<'_, T>, x: Var, name: &str) -> Result<Var> {
    let w = g.param(&format!("{name}.w"))?;
    let b = g.param(&format!("{name}.b"))?;
    let y = g.conv_transpose2x(x, w, b)?;
    Ok(g.relu(y))
}

/// Three-level encoder-decoder with skip connections. Inputs whose sides are
/// not multiples of 4 are zero-padded and the output cropped back.
pub fn unet_graph<T: Real>(g: &mut Graph<'_, T>, which: &str, x: Var) -> Result<Var> {
    if which != "template_unet" && which != "refine_unet" {
        return Err(Error::InvalidArgument(format!("unknown network {which}")));
    }
    let (c, h, w) = g.value(x).chw()?;
    let w_in = g.param(&format!("{which}.in.w"))?;
    let expected = g.shape(w_in)[1];
    if c != expected {
        return Err(Error::DimensionMismatch {
            what: "U-Net input channels",
            expected,
            got: c,
        });
    }
    let (hp, wp) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
    let x = if (hp, wp) != (h, w) {
        g.window(x, 0, 0, hp, wp)?
    } else {
        x
    };
    let core = |l: &str| format!("{which}.core.{l}");
    let x = conv_relu(g, x, &format!("{which}.in"), 1)?;
    let e0 = conv_relu(g, x, &core("enc0"), 1)?;
    let d1 = conv_relu(g, e0, &core("down1"), 2)?;
    let e1 = conv_relu(g, d1, &core("enc1"), 1)?;
    let d2 = conv_relu(g, e1, &core("down2"), 2)?;
    let m = conv_relu(g, d2, &core("mid"), 1)?;
    let u2 = up_relu(g, m, &core("up2"))?;
    let c1 = g.concat(&[u2, e1])?;
    let dec1 = conv_relu(g, c1, &core("dec1"), 1)?;
    let u1 = up_relu(g, dec1, &core("up1"))?;
    let c0 = g.concat(&[u1, e0])?;
    let dec0 = conv_relu(g, c0, &core("dec0"), 1)?;
    let out = conv(g, dec0, &format!("{which}.out"), 1)?;
    if (hp, wp) != (h, w) {
        g.window(out, 0, 0, h, w)
    } else {
        Ok(out)
    }
}

/// `[4, H, W]` geometry input to `[C_f, ⌈H/4⌉, ⌈W/4⌉]` features.
pub fn geo_encode_graph<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let (c, _, _) = g.value(x).chw()?;
    if c != GEOMETRY_INPUT {
        return Err(Error::DimensionMismatch {
            what: "geometry encoder input channels",
            expected: GEOMETRY_INPUT,
            got: c,
        });
    }
    let y = conv_relu(g, x, "geo_encoder.conv0", 2)?;
    conv_relu(g, y, "geo_encoder.conv1", 2)
}

/// Per-point decoder features `[N, C_d]` to head outputs `[N, 12]`.
pub fn heads_graph<T: Real>(g: &mut Graph<'_, T>, feats: Var) -> Result<Var> {
    let w0 = g.param("refine_heads.fc0.w")?;
    let b0 = g.param("refine_heads.fc0.b")?;
    let h = g.linear(feats, w0, b0)?;
    let h = g.relu(h);
    let w1 = g.param("refine_heads.fc1.w")?;
    let b1 = g.param("refine_heads.fc1.b")?;
    g.linear(h, w1, b1)
}

/// UV-space generator: texture `[3, H, W]` and pose maps `[7, H, W]` to
/// per-texel raw Gaussian parameters `[14, H, W]`.
pub fn template_graph<T: Real>(g: &mut Graph<'_, T>, texture: Var, pose: Var) -> Result<Var> {
    let (tc, th, tw) = g.value(texture).chw()?;
    let (pc, ph, pw) = g.value(pose).chw()?;
    if tc != TEXTURE_INPUT || pc != POSE_INPUT || (th, tw) != (ph, pw) {
        return Err(Error::InvalidArgument(format!(
            "template inputs must be [3, H, W] and [7, H, W], got {:?} and {:?}",
            g.shape(texture),
            g.shape(pose)
        )));
    }
    let t = conv_relu(g, texture, "uv_encoder.conv0", 1)?;
    let f_tex = conv_relu(g, t, "uv_encoder.conv1", 1)?;
    let p = conv_relu(g, pose, "pose_encoder.conv0", 1)?;
    let f_pose = conv_relu(g, p, "pose_encoder.conv1", 1)?;
    let f = g.concat(&[f_tex, f_pose])?;
    unet_graph(g, "template_unet", f)
}

/// Planar `[C, H, W]` tensor from an interleaved image.
pub fn image_tensor<T: Real>(img: &ImageBuf<T>) -> Tensor<T> {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut data = vec![T::zero(); c * h * w];
    for p in 0..w * h {
        for ch in 0..c {
            data[ch * h * w + p] = img.pixels[p * c + ch];
        }
    }
    Tensor {
        shape: vec![c, h, w],
        data,
    }
}

/// Runs the named U-Net on a feature map.
pub fn unet_forward<T: Real>(params: &NetworkParams<T>, which: &str, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let mut g = Graph::with_params(params);
    let x = g.input(input.tensor.clone());
    let y = unet_graph(&mut g, which, x)?;
    Ok(FeatureMap {
        tensor: g.value(y).clone(),
        provenance: input.provenance,
    })
}

/// Encodes a normal map and silhouette of equal resolution.
pub fn geo_encode<T: Real>(
    params: &NetworkParams<T>,
    normals: &ImageBuf<T>,
    silhouette: &ImageBuf<T>,
    provenance: Provenance,
) -> Result<FeatureMap<T>> {
    let x = geometry_input(normals, silhouette)?;
    let mut g = Graph::with_params(params);
    let x = g.input(x);
    let y = geo_encode_graph(&mut g, x)?;
    Ok(FeatureMap {
        tensor: g.value(y).clone(),
        provenance,
    })
}

/// Stacks normals (3) and silhouette (1) into a `[4, H, W]` tensor.
pub fn geometry_input<T: Real>(normals: &ImageBuf<T>, silhouette: &ImageBuf<T>) -> Result<Tensor<T>> {
    if normals.channels != 3 || silhouette.channels != 1 || !normals.same_size(silhouette) {
        return Err(Error::InvalidArgument(format!(
            "geometry inputs must be RGB and mask of one size, got {}x{}x{} and {}x{}x{}",
            normals.width, normals.height, normals.channels, silhouette.width, silhouette.height, silhouette.channels
        )));
    }
    let mut t = image_tensor(normals);
    t.data.extend_from_slice(&silhouette.pixels);
    t.shape[0] = 4;
    Ok(t)
}
