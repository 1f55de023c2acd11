//! Image tokens: patch splitting, patch embedding and the fixed 2-D
//! sine-cosine position table.

use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear};
use crate::tensor::{Scalar, Tensor, Var};

/// An image cut into non-overlapping `P × P` patches, row-major over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T: Scalar = f32> {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch: usize,
    pub channels: usize,
    /// `[N, P·P·C]`; each row holds its block's pixels in raster order.
    pub patches: Tensor<T>,
}

impl<T: Scalar> PatchGrid<T> {
    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }
}

/// Splits `[H, W, C]` into patches.
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<PatchGrid<T>> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::Config(format!(
            "patchify expects an [H, W, C] image, got {:?}",
            image.shape()
        )));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}×{w} is not divisible into {patch}×{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let row_len = patch * c;
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                let start = ((gy * patch + py) * w + gx * patch) * c;
                out.extend_from_slice(&src[start..start + row_len]);
            }
        }
    }
    Ok(PatchGrid {
        grid_h: gh,
        grid_w: gw,
        patch,
        channels: c,
        patches: Tensor::from_parts(vec![gh * gw, patch * patch * c], out),
    })
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(grid: &PatchGrid<T>) -> Tensor<T> {
    let (p, c) = (grid.patch, grid.channels);
    let (h, w) = (grid.grid_h * p, grid.grid_w * p);
    let mut out = vec![T::zero(); h * w * c];
    let src = grid.patches.data();
    let plen = grid.patch_len();
    for gy in 0..grid.grid_h {
        for gx in 0..grid.grid_w {
            let patch = &src[(gy * grid.grid_w + gx) * plen..][..plen];
            for py in 0..p {
                let dst = ((gy * p + py) * w + gx * p) * c;
                out[dst..dst + p * c].copy_from_slice(&patch[py * p * c..(py + 1) * p * c]);
            }
        }
    }
    Tensor::from_parts(vec![h, w, c], out)
}

/// Per-channel `(v − mean) / std` over an `[.., C]` tensor.
pub fn standardize<T: Scalar>(image: &Tensor<T>, mean: &[f32], std: &[f32]) -> Tensor<T> {
    let c = mean.len();
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let k = i % c;
        *v = (*v - T::from_f64_lossy(mean[k] as f64)) / T::from_f64_lossy(std[k] as f64);
    }
    out
}

fn sincos_1d(pos: usize, dim: usize, out: &mut [f64]) {
    for i in 0..dim / 2 {
        let omega = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        let a = pos as f64 * omega;
        out[2 * i] = a.sin();
        out[2 * i + 1] = a.cos();
    }
}

/// Fixed `[grid_h·grid_w, D]` table: the first `D/2` channels encode the
/// row, the last `D/2` the column, each as interleaved `sin, cos` pairs
/// with frequencies `10000^(−2i/(D/2))`.
pub fn posenc_2d<T: Scalar>(grid_h: usize, grid_w: usize, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::Config(format!(
            "positional encoding width {dim} is not divisible by 4"
        )));
    }
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::Config("empty patch grid".into()));
    }
    let half = dim / 2;
    let mut data = vec![T::zero(); grid_h * grid_w * dim];
    let mut buf = vec![0.0; half];
    for r in 0..grid_h {
        for c in 0..grid_w {
            let row = &mut data[(r * grid_w + c) * dim..][..dim];
            sincos_1d(r, half, &mut buf);
            for (d, &v) in row[..half].iter_mut().zip(&buf) {
                *d = T::from_f64_lossy(v);
            }
            sincos_1d(c, half, &mut buf);
            for (d, &v) in row[half..].iter_mut().zip(&buf) {
                *d = T::from_f64_lossy(v);
            }
        }
    }
    Ok(Tensor::from_parts(vec![grid_h * grid_w, dim], data))
}

/// `P_img` applied to every patch: `[N, P²C] → [N, D]`.
pub fn embed_patches<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    grid: &PatchGrid<T>,
    proj: &Linear,
) -> Result<Var> {
    if proj.fan_in != grid.patch_len() {
        return Err(Error::Config(format!(
            "patch projection expects inputs of width {}, patches have {}",
            proj.fan_in,
            grid.patch_len()
        )));
    }
    let x = cx.tape.constant(grid.patches.clone());
    proj.forward(cx, x)
}

/// `x^img = P_img(patches) + posenc`.
pub fn image_tokens<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    grid: &PatchGrid<T>,
    proj: &Linear,
    posenc: &Tensor<T>,
) -> Result<Var> {
    let e = embed_patches(cx, grid, proj)?;
    let pe = cx.tape.constant(posenc.clone());
    cx.tape.add(e, pe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor<f32> {
        Tensor::from_fn(vec![h, w, c], |i| i as f32)
    }

    #[test]
    fn patch_counts() {
        let g = patchify(&Tensor::<f32>::zeros([224, 224, 3]), 16).unwrap();
        assert_eq!((g.len(), g.patch_len()), (196, 768));
        let g = patchify(&Tensor::<f32>::zeros([112, 112, 3]), 16).unwrap();
        assert_eq!(g.len(), 49);
    }

    #[test]
    fn constant_image_gives_constant_patches() {
        let g = patchify(&Tensor::full([32, 48, 3], 0.25f32), 16).unwrap();
        assert!(g.patches.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn patch_holds_raster_block() {
        let img = ramp(4, 6, 1);
        let g = patchify(&img, 2).unwrap();
        // grid is 2×3; patch 4 is block (row 1, col 1)
        assert_eq!(&g.patches.data()[4 * 4..5 * 4], &[14.0, 15.0, 20.0, 21.0]);
    }

    #[test]
    fn indivisible_image_rejected() {
        let err = patchify(&Tensor::<f32>::zeros([30, 32, 3]), 16).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn posenc_origin_is_sin0_cos1() {
        let pe = posenc_2d::<f64>(3, 3, 16).unwrap();
        let row = &pe.data()[..16];
        for (i, &v) in row.iter().enumerate() {
            assert_eq!(v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn posenc_separates_axes() {
        let pe = posenc_2d::<f64>(4, 4, 8).unwrap();
        let a = &pe.data()[8..16]; // (0,1)
        let b = &pe.data()[4 * 8..5 * 8]; // (1,0)
        assert_ne!(a, b);
    }

    #[test]
    fn posenc_rows_pairwise_distinct_on_vit_base_grid() {
        let pe = posenc_2d::<f64>(14, 14, 768).unwrap();
        let rows: Vec<&[f64]> = pe.data().chunks(768).collect();
        let mut min = f64::INFINITY;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let d: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 0.0, "min pairwise distance {min}");
    }

    #[test]
    fn posenc_width_must_divide_by_four() {
        assert!(matches!(posenc_2d::<f32>(2, 2, 6), Err(Error::Config(_))));
    }

    fn store_with_proj(fan_in: usize, d: usize) -> (ParamStore<f64>, Linear) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let proj = Linear::new(&mut store, "proj", fan_in, d, true, &mut rng);
        (store, proj)
    }

    #[test]
    fn zero_image_embeds_to_zero() {
        let (store, proj) = store_with_proj(12, 8);
        let mut cx = Ctx::new(&store, false);
        let g = patchify(&Tensor::<f64>::zeros([4, 4, 3]), 2).unwrap();
        let t = embed_patches(&mut cx, &g, &proj).unwrap();
        assert!(cx.tape.value(t).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_projection_keeps_patch_values() {
        let (mut store, proj) = store_with_proj(12, 16);
        let w = Tensor::from_fn(vec![12, 16], |i| if i / 16 == i % 16 { 1.0 } else { 0.0 });
        store.set("proj.weight", w).unwrap();
        let img = ramp(4, 4, 3).cast::<f64>();
        let g = patchify(&img, 2).unwrap();
        let mut cx = Ctx::new(&store, false);
        let t = embed_patches(&mut cx, &g, &proj).unwrap();
        let out = cx.tape.value(t);
        for k in 0..4 {
            assert_eq!(&out.data()[k * 16..k * 16 + 12], &g.patches.data()[k * 12..(k + 1) * 12]);
        }
    }

    #[test]
    fn identical_patches_identical_tokens_before_posenc() {
        let (store, proj) = store_with_proj(12, 8);
        let mut img = Tensor::<f64>::zeros([4, 4, 3]);
        for (y, x) in [(0, 0), (0, 1), (2, 2), (2, 3)] {
            for c in 0..3 {
                let o = img.offset(&[y, x, c]);
                img.data_mut()[o] = 0.1 * (c + 1) as f64;
            }
        }
        // top-left and bottom-right patches hold the same pixels
        let g = patchify(&img, 2).unwrap();
        let mut cx = Ctx::new(&store, false);
        let t = embed_patches(&mut cx, &g, &proj).unwrap();
        let out = cx.tape.value(t).data();
        assert_eq!(&out[0..8], &out[3 * 8..4 * 8]);
    }

    #[test]
    fn posenc_added_exactly() {
        let (store, proj) = store_with_proj(12, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = Tensor::<f64>::from_fn(vec![4, 4, 3], |_| rand::Rng::gen(&mut rng));
        let g = patchify(&img, 2).unwrap();
        let pe = posenc_2d::<f64>(2, 2, 8).unwrap();
        let mut cx = Ctx::new(&store, false);
        let e = embed_patches(&mut cx, &g, &proj).unwrap();
        let t = image_tokens(&mut cx, &g, &proj, &pe).unwrap();
        let (e, t) = (cx.tape.value(e), cx.tape.value(t));
        for i in 0..e.len() {
            assert_eq!(t.data()[i], e.data()[i] + pe.data()[i]);
        }
    }

    proptest! {
        #[test]
        fn patchify_round_trip(gh in 1usize..4, gw in 1usize..4, p in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Tensor::<f32>::from_fn(vec![gh * p, gw * p, c], |_| rand::Rng::gen(&mut rng));
            let g = patchify(&img, p).unwrap();
            prop_assert_eq!(g.patches.shape()[0], gh * gw);
            prop_assert_eq!(unpatchify(&g), img);
        }
    }
}
