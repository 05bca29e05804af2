//! sRGB to CIE L*a*b* conversion (D65 reference white, 2 degree observer).

/// A color in CIE L*a*b*. L is in [0, 100] for 8-bit sRGB inputs; a and b
/// roughly span [-110, 110].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LabPixel {
    pub l: f32,
    pub a: f32,
    pub b: f32,
}

impl LabPixel {
    pub fn new(l: f32, a: f32, b: f32) -> Self {
        LabPixel { l, a, b }
    }

    /// Euclidean distance to another Lab color.
    pub fn distance(&self, other: &LabPixel) -> f32 {
        let dl = self.l - other.l;
        let da = self.a - other.a;
        let db = self.b - other.b;
        (dl * dl + da * da + db * db).sqrt()
    }
}

const D65_XN: f64 = 0.95047;
const D65_YN: f64 = 1.0;
const D65_ZN: f64 = 1.08883;

// 6/29 cube: the linear/cube-root split point of the L* function.
const LAB_EPS: f64 = 216.0 / 24389.0;
// 1/(3*(6/29)^2), slope of the linear segment.
const LAB_KAP: f64 = 841.0 / 108.0;

fn srgb_linearize(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS {
        t.cbrt()
    } else {
        LAB_KAP * t + 4.0 / 29.0
    }
}

/// Converts an 8-bit sRGB triple to CIE L*a*b*.
pub fn srgb_to_lab(rgb: [u8; 3]) -> LabPixel {
    let r = srgb_linearize(rgb[0]);
    let g = srgb_linearize(rgb[1]);
    let b = srgb_linearize(rgb[2]);

    // sRGB D65 primaries.
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    let fx = lab_f(x / D65_XN);
    let fy = lab_f(y / D65_YN);
    let fz = lab_f(z / D65_ZN);

    LabPixel {
        l: (116.0 * fy - 16.0) as f32,
        a: (500.0 * (fx - fy)) as f32,
        b: (200.0 * (fy - fz)) as f32,
    }
}

fn lab_f_inv(t: f64) -> f64 {
    let t3 = t * t * t;
    if t3 > LAB_EPS {
        t3
    } else {
        (t - 4.0 / 29.0) / LAB_KAP
    }
}

fn srgb_delinearize(c: f64) -> u8 {
    let c = if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Converts CIE L*a*b* back to 8-bit sRGB, clamping out-of-gamut values.
pub fn lab_to_srgb(lab: LabPixel) -> [u8; 3] {
    let fy = (lab.l as f64 + 16.0) / 116.0;
    let fx = fy + lab.a as f64 / 500.0;
    let fz = fy - lab.b as f64 / 200.0;

    let x = D65_XN * lab_f_inv(fx);
    let y = D65_YN * lab_f_inv(fy);
    let z = D65_ZN * lab_f_inv(fz);

    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;

    [srgb_delinearize(r), srgb_delinearize(g), srgb_delinearize(b)]
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference conversion written directly from the sRGB and CIE
    // definitions, kept separate from the production path above so the two
    // can disagree. The probe table below was produced with it.
    fn reference_lab(rgb: [u8; 3]) -> (f64, f64, f64) {
        fn lin(c: u8) -> f64 {
            let c = c as f64 / 255.0;
            if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            }
        }
        let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
        let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        let f = |t: f64| {
            let d: f64 = 6.0 / 29.0;
            if t > d.powi(3) {
                t.powf(1.0 / 3.0)
            } else {
                t / (3.0 * d * d) + 4.0 / 29.0
            }
        };
        let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
        (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
    }

    const PROBE: [([u8; 3], [f64; 3]); 16] = [
        ([255, 255, 255], [100.0000, 0.0000, 0.0000]),
        ([0, 0, 0], [0.0000, 0.0000, 0.0000]),
        ([255, 0, 0], [53.2408, 80.0925, 67.2032]),
        ([0, 255, 0], [87.7347, -86.1827, 83.1793]),
        ([0, 0, 255], [32.2970, 79.1875, -107.8602]),
        ([255, 255, 0], [97.1393, -21.5537, 94.4780]),
        ([0, 255, 255], [91.1132, -48.0875, -14.1312]),
        ([255, 0, 255], [60.3242, 98.2343, -60.8249]),
        ([128, 128, 128], [53.5850, 0.0000, 0.0000]),
        ([192, 64, 32], [45.6083, 49.7510, 45.7958]),
        ([10, 200, 100], [71.0705, -63.3763, 38.3582]),
        ([70, 70, 200], [37.5741, 40.1037, -67.6194]),
        ([240, 240, 240], [94.7962, 0.0000, 0.0000]),
        ([5, 5, 5], [1.3709, 0.0000, 0.0000]),
        ([100, 50, 150], [32.2413, 42.1967, -46.4003]),
        ([200, 150, 100], [65.7600, 12.7599, 33.5627]),
    ];

    #[test]
    fn matches_frozen_probe_values() {
        for (rgb, want) in PROBE {
            let got = srgb_to_lab(rgb);
            assert!(
                (got.l as f64 - want[0]).abs() < 0.01
                    && (got.a as f64 - want[1]).abs() < 0.01
                    && (got.b as f64 - want[2]).abs() < 0.01,
                "lab({rgb:?}) = ({}, {}, {}), expected {want:?}",
                got.l,
                got.a,
                got.b
            );
        }
    }

    #[test]
    fn matches_reference_formula_on_all_gray_levels_and_probe() {
        for (rgb, _) in PROBE {
            let (l, a, b) = reference_lab(rgb);
            let got = srgb_to_lab(rgb);
            assert!((got.l as f64 - l).abs() < 1e-4);
            assert!((got.a as f64 - a).abs() < 1e-4);
            assert!((got.b as f64 - b).abs() < 1e-4);
        }
        for v in 0..=255u8 {
            let (l, a, b) = reference_lab([v, v, v]);
            let got = srgb_to_lab([v, v, v]);
            assert!((got.l as f64 - l).abs() < 1e-4, "gray {v}");
            assert!((got.a as f64 - a).abs() < 2e-4);
            assert!((got.b as f64 - b).abs() < 2e-4);
        }
    }

    #[test]
    fn white_is_l100_and_neutral() {
        let lab = srgb_to_lab([255, 255, 255]);
        assert!((lab.l - 100.0).abs() < 0.01);
        assert!(lab.a.abs() < 0.01);
        assert!(lab.b.abs() < 0.01);
    }

    #[test]
    fn l_monotone_in_gray_level() {
        let mut prev = -1.0f32;
        for v in 0..=255u8 {
            let lab = srgb_to_lab([v, v, v]);
            assert!(lab.l > prev, "L not increasing at gray {v}");
            assert!(lab.a.abs() < 1e-3 && lab.b.abs() < 1e-3);
            prev = lab.l;
        }
    }

    #[test]
    fn round_trips_through_lab() {
        for (rgb, _) in PROBE {
            let back = lab_to_srgb(srgb_to_lab(rgb));
            for c in 0..3 {
                assert!(
                    (back[c] as i32 - rgb[c] as i32).abs() <= 1,
                    "round trip {rgb:?} -> {back:?}"
                );
            }
        }
    }
}
