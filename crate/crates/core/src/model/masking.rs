//! Mask geometry for layer-masked inference.

use super::{window_output, Conv2d};
use crate::error::{Error, Result};
use crate::tensor::{Mask, Planes};

/// Feature map paired with a validity mask of the same spatial shape.
///
/// Values at invalid positions carry no information; consumers never read
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTensor {
    pub values: Planes,
    pub mask: Mask,
}

impl MaskedTensor {
    pub fn new(values: Planes, mask: Mask) -> Result<Self> {
        if (values.height, values.width) != (mask.height, mask.width) {
            return Err(Error::InvalidArgument(format!(
                "mask {}x{} does not match values {}x{}",
                mask.height, mask.width, values.height, values.width
            )));
        }
        Ok(Self { values, mask })
    }
}

/// An output position is valid iff its receptive window holds at least one
/// valid input position (a max-pool of the mask with the layer's geometry).
pub fn propagate_mask(
    mask: &Mask,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Result<Mask> {
    let (oh, ow) =
        window_output(mask.height, mask.width, kernel, stride, padding).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "window {kernel:?}/stride {stride}/padding {padding} does not fit a {}x{} mask",
                mask.height, mask.width
            ))
        })?;
    let (kh, kw) = kernel;
    let (h, w) = (mask.height as isize, mask.width as isize);
    Ok(Mask::from_fn(oh, ow, |oy, ox| {
        for ky in 0..kh {
            let iy = (oy * stride + ky) as isize - padding as isize;
            if iy < 0 || iy >= h {
                continue;
            }
            for kx in 0..kw {
                let ix = (ox * stride + kx) as isize - padding as isize;
                if ix >= 0 && ix < w && mask.get(iy as usize, ix as usize) {
                    return true;
                }
            }
        }
        false
    }))
}

/// Mask carried past the first convolution, which itself reads the unmasked
/// image. An output position is valid iff the `stride × stride` block of input
/// positions starting at its kernel center holds a valid pixel; for stride 1
/// this is the input mask sampled at the kernel centers.
pub fn first_layer_mask(mask: &Mask, conv: &Conv2d) -> Result<Mask> {
    let (oh, ow) = conv
        .output_size(mask.height, mask.width)
        .ok_or_else(|| Error::InvalidArgument("first convolution does not fit the mask".into()))?;
    let (kh, kw) = conv.kernel;
    let s = conv.stride as isize;
    let pad = conv.padding as isize;
    let (h, w) = (mask.height as isize, mask.width as isize);
    Ok(Mask::from_fn(oh, ow, |oy, ox| {
        let cy = oy as isize * s - pad + (kh as isize - 1) / 2;
        let cx = ox as isize * s - pad + (kw as isize - 1) / 2;
        for y in cy.max(0)..(cy + s).min(h) {
            for x in cx.max(0)..(cx + s).min(w) {
                if mask.get(y as usize, x as usize) {
                    return true;
                }
            }
        }
        false
    }))
}

/// How erosion treats positions outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErosionBorder {
    /// Outside counts as masked; the image edge erodes the mask.
    Masked,
    /// Outside counts as valid; only masked pixels erode the mask.
    Valid,
}

/// Morphological erosion with a `k × k` structuring element; the image border
/// counts as masked.
pub fn erode_mask(mask: &Mask, k: usize) -> Result<Mask> {
    erode_mask_with(mask, k, ErosionBorder::Masked)
}

pub fn erode_mask_with(mask: &Mask, k: usize, border: ErosionBorder) -> Result<Mask> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "erosion kernel must be at least 1".into(),
        ));
    }
    let before = ((k - 1) / 2) as isize;
    let (h, w) = (mask.height as isize, mask.width as isize);
    Ok(Mask::from_fn(mask.height, mask.width, |y, x| {
        if !mask.get(y, x) {
            return false;
        }
        for dy in 0..k as isize {
            let yy = y as isize - before + dy;
            for dx in 0..k as isize {
                let xx = x as isize - before + dx;
                let inside = yy >= 0 && yy < h && xx >= 0 && xx < w;
                let ok = if inside {
                    mask.get(yy as usize, xx as usize)
                } else {
                    border == ErosionBorder::Valid
                };
                if !ok {
                    return false;
                }
            }
        }
        true
    }))
}

/// Fills masked positions near the valid region by iterated 8-neighbourhood
/// averaging, `⌈k/2⌉` rounds. Each round fills every not-yet-filled position
/// that touches a filled one with the mean of those neighbours, reading the
/// previous round's values. Positions never reached are zero and valid
/// positions keep their values.
pub fn neighborhood_pad(mt: &MaskedTensor, kernel_size: usize) -> Result<Planes> {
    if !mt.mask.any() {
        return Err(Error::Contract(
            "neighborhood padding of a fully masked plane".into(),
        ));
    }
    let (h, w) = (mt.values.height, mt.values.width);
    let mut values = mt.values.clone();
    values.zero_outside(&mt.mask);
    let mut filled = mt.mask.bits.clone();
    let rounds = kernel_size.div_ceil(2);

    let mut frontier: Vec<(usize, Vec<usize>)> = Vec::new();
    for _ in 0..rounds {
        frontier.clear();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if filled[p] {
                    continue;
                }
                let mut sources = Vec::new();
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            let q = yy as usize * w + xx as usize;
                            if filled[q] {
                                sources.push(q);
                            }
                        }
                    }
                }
                if !sources.is_empty() {
                    frontier.push((p, sources));
                }
            }
        }
        if frontier.is_empty() {
            break;
        }
        let n = values.plane_len();
        for c in 0..values.channels {
            let plane = &mut values.data[c * n..(c + 1) * n];
            let fresh: Vec<f32> = frontier
                .iter()
                .map(|(_, src)| src.iter().map(|&q| plane[q]).sum::<f32>() / src.len() as f32)
                .collect();
            for ((p, _), v) in frontier.iter().zip(fresh) {
                plane[*p] = v;
            }
        }
        for (p, _) in &frontier {
            filled[*p] = true;
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
        Mask::from_fn(h, w, |_, _| rng.random_bool(p))
    }

    #[test]
    fn all_valid_propagates_to_all_valid() {
        let m = Mask::filled(7, 9, true);
        assert!(propagate_mask(&m, (3, 3), 1, 1).unwrap().all());
        assert!(propagate_mask(&m, (5, 5), 2, 0).unwrap().all());
    }

    #[test]
    fn single_pixel_becomes_three_by_three_block() {
        let mut m = Mask::filled(7, 7, false);
        m.set(3, 3, true);
        let out = propagate_mask(&m, (3, 3), 1, 1).unwrap();
        let expected = Mask::from_fn(7, 7, |y, x| (2..=4).contains(&y) && (2..=4).contains(&x));
        assert_eq!(out, expected);
    }

    #[test]
    fn left_half_valid_where_window_overlaps() {
        let m = Mask::from_fn(8, 8, |_, x| x < 4);
        let out = propagate_mask(&m, (3, 3), 1, 1).unwrap();
        assert_eq!(out, Mask::from_fn(8, 8, |_, x| x <= 4));
    }

    #[test]
    fn strided_propagation_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_mask(&mut rng, 13, 11, 0.1);
            let out = propagate_mask(&m, (5, 5), 2, 1).unwrap();
            // Oracle: enumerate every window explicitly over a padded copy.
            let (ph, pw) = (13 + 2, 11 + 2);
            let padded = Mask::from_fn(ph, pw, |y, x| {
                y >= 1 && x >= 1 && y - 1 < 13 && x - 1 < 11 && m.get(y - 1, x - 1)
            });
            let (oh, ow) = ((ph - 5) / 2 + 1, (pw - 5) / 2 + 1);
            assert_eq!((out.height, out.width), (oh, ow));
            for oy in 0..oh {
                for ox in 0..ow {
                    let window: Vec<bool> = (0..25)
                        .map(|t| padded.get(oy * 2 + t / 5, ox * 2 + t % 5))
                        .collect();
                    assert_eq!(out.get(oy, ox), window.iter().any(|b| *b));
                }
            }
        }
    }

    #[test]
    fn propagation_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let small = random_mask(&mut rng, 10, 10, 0.2);
            let big = small.or(&random_mask(&mut rng, 10, 10, 0.2));
            let a = propagate_mask(&small, (3, 3), 2, 1).unwrap();
            let b = propagate_mask(&big, (3, 3), 2, 1).unwrap();
            assert!(a.is_subset_of(&b));
        }
    }

    #[test]
    fn erosion_of_full_square() {
        let m = Mask::filled(10, 10, true);
        let e = erode_mask(&m, 7).unwrap();
        assert_eq!(
            e,
            Mask::from_fn(10, 10, |y, x| (3..7).contains(&y) && (3..7).contains(&x))
        );
        assert_eq!(erode_mask_with(&m, 7, ErosionBorder::Valid).unwrap(), m);
    }

    #[test]
    fn thin_mask_erodes_away() {
        let m = Mask::from_fn(12, 12, |_, x| (4..6).contains(&x));
        assert!(!erode_mask(&m, 3).unwrap().any());
    }

    #[test]
    fn erosion_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for k in 1..=5 {
            let blob = random_mask(&mut rng, 9, 9, 0.3).dilate(1);
            let e = erode_mask(&blob, k).unwrap();
            assert!(e.is_subset_of(&blob));
            let off = (k - 1) / 2;
            for y in 0..9 {
                for x in 0..9 {
                    let mut all = true;
                    for t in 0..k * k {
                        let (yy, xx) = (
                            (y + t / k) as isize - off as isize,
                            (x + t % k) as isize - off as isize,
                        );
                        all &= yy >= 0
                            && xx >= 0
                            && yy < 9
                            && xx < 9
                            && blob.get(yy as usize, xx as usize);
                    }
                    assert_eq!(e.get(y, x), all, "k={k} at ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn padding_of_constant_region_is_constant() {
        let mask = Mask::from_fn(8, 8, |y, x| y < 4 && x < 4);
        let mut values = Planes::zeros(2, 8, 8);
        values.data.iter_mut().for_each(|v| *v = 3.5);
        let padded =
            neighborhood_pad(&MaskedTensor::new(values, mask.clone()).unwrap(), 3).unwrap();
        let reach = mask.dilate(2);
        for c in 0..2 {
            for y in 0..8 {
                for x in 0..8 {
                    let expect = if reach.get(y, x) { 3.5 } else { 0.0 };
                    assert_eq!(padded.get(c, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn single_pixel_spreads_to_neighbours() {
        let mut mask = Mask::filled(5, 5, false);
        mask.set(2, 2, true);
        let mut values = Planes::zeros(1, 5, 5);
        values.set(0, 2, 2, 8.0);
        // k = 1 gives a single round.
        let padded = neighborhood_pad(&MaskedTensor::new(values, mask).unwrap(), 1).unwrap();
        for y in 0..5usize {
            for x in 0..5usize {
                let near = y.abs_diff(2) <= 1 && x.abs_diff(2) <= 1;
                assert_eq!(padded.get(0, y, x), if near { 8.0 } else { 0.0 });
            }
        }
    }

    /// Second, independent formulation: each round computes, for every
    /// position, the neighbour sum and count by sliding a 3×3 box over the
    /// filled indicator.
    fn pad_oracle(values: &Planes, mask: &Mask, k: usize) -> Planes {
        let (h, w) = (values.height, values.width);
        let mut out = values.clone();
        out.zero_outside(mask);
        let mut filled: Vec<f32> = mask
            .bits
            .iter()
            .map(|b| if *b { 1.0 } else { 0.0 })
            .collect();
        for _ in 0..k.div_ceil(2) {
            let prev = out.clone();
            let prev_filled = filled.clone();
            for c in 0..values.channels {
                for y in 0..h {
                    for x in 0..w {
                        if prev_filled[y * w + x] == 1.0 {
                            continue;
                        }
                        let mut sum = 0.0f32;
                        let mut cnt = 0.0f32;
                        for yy in y.saturating_sub(1)..(y + 2).min(h) {
                            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                                let f = prev_filled[yy * w + xx];
                                if f == 1.0 {
                                    sum += prev.get(c, yy, xx);
                                    cnt += 1.0;
                                }
                            }
                        }
                        if cnt > 0.0 {
                            out.set(c, y, x, sum / cnt);
                            filled[y * w + x] = 1.0;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn padding_matches_independent_stencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..30 {
            let (h, w) = (rng.random_range(3..14), rng.random_range(3..14));
            let mut mask = random_mask(&mut rng, h, w, 0.15);
            mask.set(rng.random_range(0..h), rng.random_range(0..w), true);
            let mut values = Planes::zeros(3, h, w);
            values
                .data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-2.0..2.0));
            let k = [1, 3, 5, 7][trial % 4];
            let mt = MaskedTensor::new(values.clone(), mask.clone()).unwrap();
            let fast = neighborhood_pad(&mt, k).unwrap();
            let slow = pad_oracle(&values, &mask, k);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!(
                    (a - b).abs() <= 1e-6 * (1.0 + b.abs()),
                    "trial {trial}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn padding_ignores_values_at_masked_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask =
            random_mask(&mut rng, 9, 9, 0.3).or(&Mask::from_fn(9, 9, |y, x| y == 4 && x == 4));
        let mut a = Planes::zeros(2, 9, 9);
        a.data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut b = a.clone();
        for c in 0..2 {
            for y in 0..9 {
                for x in 0..9 {
                    if !mask.get(y, x) {
                        b.set(c, y, x, rng.random_range(-100.0..100.0));
                    }
                }
            }
        }
        let pa = neighborhood_pad(&MaskedTensor::new(a, mask.clone()).unwrap(), 5).unwrap();
        let pb = neighborhood_pad(&MaskedTensor::new(b, mask).unwrap(), 5).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn padding_rejects_empty_plane() {
        let mt = MaskedTensor::new(Planes::zeros(1, 3, 3), Mask::filled(3, 3, false)).unwrap();
        assert!(matches!(neighborhood_pad(&mt, 3), Err(Error::Contract(_))));
    }
}
