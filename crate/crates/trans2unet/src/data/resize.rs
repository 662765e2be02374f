//! Plain-buffer resampling for ingestion: bilinear for images, nearest
//! neighbor for masks (so masks stay binary). Half-pixel centers, edge
//! clamped, matching the tensor upsampling op's convention.

/// Resizes one `w x h` channel to `tw x th`.
pub fn bilinear_resize(src: &[f32], w: usize, h: usize, tw: usize, th: usize) -> Vec<f32> {
    assert_eq!(src.len(), w * h, "source buffer size");
    let taps = |n: usize, tn: usize| -> Vec<(usize, usize, f32)> {
        (0..tn)
            .map(|o| {
                let pos = (o as f64 + 0.5) * n as f64 / tn as f64 - 0.5;
                let i0 = pos.floor().clamp(0.0, (n - 1) as f64) as usize;
                let i1 = (i0 + 1).min(n - 1);
                let frac = (pos - i0 as f64).clamp(0.0, 1.0) as f32;
                (i0, i1, frac)
            })
            .collect()
    };
    let xs = taps(w, tw);
    let ys = taps(h, th);
    let mut out = Vec::with_capacity(tw * th);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Nearest-neighbor counterpart; value-preserving, so binary stays binary.
pub fn nearest_resize(src: &[f32], w: usize, h: usize, tw: usize, th: usize) -> Vec<f32> {
    assert_eq!(src.len(), w * h, "source buffer size");
    let pick = |o: usize, n: usize, tn: usize| -> usize {
        (((o as f64 + 0.5) * n as f64 / tn as f64).floor() as usize).min(n - 1)
    };
    let mut out = Vec::with_capacity(tw * th);
    for oy in 0..th {
        let sy = pick(oy, h, th);
        for ox in 0..tw {
            out.push(src[sy * w + pick(ox, w, tw)]);
        }
    }
    out
}
