use crate::raster::RgbImage;

// sRGB (D65) to XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIELAB of one 8-bit sRGB pixel under the D65 white point.
pub fn srgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (out, row) in xyz.iter_mut().zip(RGB_TO_XYZ) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts a whole image; output is row-major `[L, a, b]` per pixel.
pub fn rgb_to_lab(image: &RgbImage) -> Vec<[f64; 3]> {
    // 8-bit input has only 256 levels per channel, but the cube root does not
    // separate, so convert per pixel with a small cache for repeated colors.
    let mut cache: std::collections::HashMap<[u8; 3], [f64; 3]> = Default::default();
    image
        .as_raw()
        .chunks_exact(3)
        .map(|p| {
            let key = [p[0], p[1], p[2]];
            *cache.entry(key).or_insert_with(|| srgb_pixel_to_lab(key))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = srgb_pixel_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-3);
        assert!(w[1].abs() < 0.5 && w[2].abs() < 0.5);
        let b = srgb_pixel_to_lab([0, 0, 0]);
        assert!(b.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn matches_reference_conversion() {
        // Frozen from scikit-image `color.rgb2lab` (float input = rgb / 255).
        let cases = [
            ([128u8, 128, 128], [53.585_013_5, -1.472_645_55e-3, 2.791_451_50e-3]),
            ([200, 30, 90], [44.160_887_01, 65.806_642_57, 10.615_001_93]),
        ];
        for (rgb, want) in cases {
            let got = srgb_pixel_to_lab(rgb);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-2, "{rgb:?}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn image_conversion_is_per_pixel() {
        let img = RgbImage::from_fn(3, 2, |r, c| [(r * 90) as u8, (c * 80) as u8, 40]);
        let lab = rgb_to_lab(&img);
        assert_eq!(lab.len(), 6);
        assert_eq!(lab[4], srgb_pixel_to_lab(img.pixel(1, 1)));
    }
}
