//! 2D dual-tree complex wavelet transform (analysis only).
//!
//! Level 1 uses a near-symmetric biorthogonal pair, levels >= 2 use the
//! quarter-shift pair. Tree a lands in the real part and tree b in the
//! imaginary part of each subband, recombined into six oriented bands per
//! scale. Boundaries use symmetric extension with repeated end samples.

use std::f64::consts::SQRT_2;
use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};

// Near-symmetric 13/19-tap level-1 analysis filters, unit DC gain as published.
const NEAR_SYM_B_H0: [f64; 13] = [
    -0.0017578125,
    0.0,
    0.022265625,
    -0.046875,
    -0.0482421875,
    0.296875,
    0.55546875,
    0.296875,
    -0.0482421875,
    -0.046875,
    0.022265625,
    0.0,
    -0.0017578125,
];

const NEAR_SYM_B_H1: [f64; 19] = [
    -7.062639508928571e-05,
    0.0,
    0.0013419015066964285,
    -0.0018833705357142855,
    -0.007156808035714285,
    0.023856026785714284,
    0.05564313616071428,
    -0.05168805803571428,
    -0.29975760323660716,
    0.5594308035714286,
    -0.29975760323660716,
    -0.05168805803571428,
    0.05564313616071428,
    0.023856026785714284,
    -0.007156808035714285,
    -0.0018833705357142855,
    0.0013419015066964285,
    0.0,
    -7.062639508928571e-05,
];

// 14-tap quarter-shift low-pass, tree a. Tree b is its reversal.
const QSHIFT_B_H0A: [f64; 14] = [
    0.003253142763653182,
    -0.00388321199915849,
    0.03466034684485349,
    -0.03887280126882779,
    -0.11720388769911527,
    0.27529538466888204,
    0.7561456438925225,
    0.5688104207121227,
    0.011866092033797,
    -0.1067118046866654,
    0.023825384794920298,
    0.01702522388155399,
    -0.005439475937274115,
    -0.004556895628475491,
];

const QSHIFT_B_H1A: [f64; 14] = [
    -0.004556895628475491,
    0.005439475937274115,
    0.01702522388155399,
    -0.023825384794920298,
    -0.1067118046866654,
    -0.011866092033797,
    0.5688104207121227,
    -0.7561456438925225,
    0.27529538466888204,
    0.11720388769911527,
    -0.03887280126882779,
    -0.03466034684485349,
    -0.00388321199915849,
    -0.003253142763653182,
];

const NEAR_SYM_A_H0: [f64; 5] = [-0.05, 0.25, 0.6, 0.25, -0.05];

const NEAR_SYM_A_H1: [f64; 7] = [
    0.010714285714285713,
    -0.05357142857142857,
    -0.26071428571428573,
    0.6071428571428571,
    -0.26071428571428573,
    -0.05357142857142857,
    0.010714285714285713,
];

const QSHIFT_A_H0A: [f64; 10] = [
    0.051130405283831656,
    -0.013975370246888838,
    -0.10983605166597087,
    0.26383956105893763,
    0.7666284677930372,
    0.5636557101270515,
    0.0008736226952170968,
    -0.1002312195074762,
    -0.0016896812725281543,
    -0.006181881892116438,
];

const QSHIFT_A_H1A: [f64; 10] = [
    -0.006181881892116438,
    0.0016896812725281543,
    -0.1002312195074762,
    -0.0008736226952170968,
    0.5636557101270515,
    -0.7666284677930372,
    0.26383956105893763,
    0.10983605166597087,
    -0.013975370246888838,
    -0.051130405283831656,
];

/// Level-1 analysis pair, shared by both trees (tree separation comes from
/// the quad sampling in the complex recombination).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOneFilters {
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
}

/// Quarter-shift pair for levels >= 2, one low/high filter per tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QshiftFilters {
    pub lowpass_a: Vec<f64>,
    pub lowpass_b: Vec<f64>,
    pub highpass_a: Vec<f64>,
    pub highpass_b: Vec<f64>,
}

/// Analysis filter coefficients for the dual-tree transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub name: String,
    pub level1: LevelOneFilters,
    pub qshift: QshiftFilters,
}

/// Names accepted by [`build_filter_bank`].
pub const FILTER_FAMILIES: [&str; 3] = ["default", "near_sym_b_qshift_b", "near_sym_a_qshift_a"];

/// Returns the coefficient arrays for a named filter family.
///
/// Level-1 taps are rescaled by √2 so every low-pass filter in the bank has
/// DC gain √2 and each 2D level scales a constant by 2.
pub fn build_filter_bank(family: &str) -> Result<FilterBank> {
    let (name, h0, h1, q0, q1): (&str, &[f64], &[f64], &[f64], &[f64]) = match family {
        "default" | "near_sym_b_qshift_b" => (
            "near_sym_b_qshift_b",
            &NEAR_SYM_B_H0,
            &NEAR_SYM_B_H1,
            &QSHIFT_B_H0A,
            &QSHIFT_B_H1A,
        ),
        "near_sym_a_qshift_a" => (
            "near_sym_a_qshift_a",
            &NEAR_SYM_A_H0,
            &NEAR_SYM_A_H1,
            &QSHIFT_A_H0A,
            &QSHIFT_A_H1A,
        ),
        other => {
            return Err(ShdlError::Config(format!(
                "unknown filter family '{other}' (supported: {})",
                FILTER_FAMILIES.join(", ")
            )))
        }
    };
    let scaled = |h: &[f64]| h.iter().map(|v| v * SQRT_2).collect::<Vec<_>>();
    let reversed = |h: &[f64]| h.iter().rev().copied().collect::<Vec<_>>();
    FilterBank::new(
        name,
        LevelOneFilters {
            lowpass: scaled(h0),
            highpass: scaled(h1),
        },
        QshiftFilters {
            lowpass_a: q0.to_vec(),
            lowpass_b: reversed(q0),
            highpass_a: q1.to_vec(),
            highpass_b: reversed(q1),
        },
    )
}

impl FilterBank {
    /// Builds a bank from explicit taps, checking the structural invariants.
    pub fn new(name: &str, level1: LevelOneFilters, qshift: QshiftFilters) -> Result<Self> {
        let all: [(&str, &Vec<f64>); 6] = [
            ("level1 lowpass", &level1.lowpass),
            ("level1 highpass", &level1.highpass),
            ("qshift lowpass a", &qshift.lowpass_a),
            ("qshift lowpass b", &qshift.lowpass_b),
            ("qshift highpass a", &qshift.highpass_a),
            ("qshift highpass b", &qshift.highpass_b),
        ];
        for (label, taps) in all {
            if taps.is_empty() || taps.iter().any(|v| !v.is_finite()) {
                return Err(ShdlError::Config(format!(
                    "{label} filter must be non-empty and finite"
                )));
            }
        }
        if level1.lowpass.len().is_multiple_of(2) || level1.highpass.len().is_multiple_of(2) {
            return Err(ShdlError::Config("level-1 filters must have odd length".into()));
        }
        let m = qshift.lowpass_a.len();
        if !m.is_multiple_of(2)
            || [&qshift.lowpass_b, &qshift.highpass_a, &qshift.highpass_b]
                .iter()
                .any(|h| h.len() != m)
        {
            return Err(ShdlError::Config(
                "q-shift filters must share one even length".into(),
            ));
        }
        if level1.lowpass == level1.highpass
            || qshift.lowpass_a == qshift.highpass_a
            || qshift.lowpass_b == qshift.highpass_b
        {
            return Err(ShdlError::Config(
                "low-pass and high-pass filters must differ".into(),
            ));
        }
        Ok(Self {
            name: name.to_string(),
            level1,
            qshift,
        })
    }
}

/// The six fixed subband orientations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Deg15,
    Deg45,
    Deg75,
    Deg105,
    Deg135,
    Deg165,
}

impl Orientation {
    pub const ALL: [Orientation; 6] = [
        Orientation::Deg15,
        Orientation::Deg45,
        Orientation::Deg75,
        Orientation::Deg105,
        Orientation::Deg135,
        Orientation::Deg165,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn degrees(self) -> u32 {
        15 + 30 * self.index() as u32
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

/// One oriented complex subband at scale `scale` (1 = finest).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSubband {
    pub scale: usize,
    pub orientation: Orientation,
    pub data: Array2<Complex64>,
}

/// All oriented subbands of a J-level decomposition plus the low-pass residual.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    /// Ordered by scale, then orientation.
    pub subbands: Vec<ComplexSubband>,
    pub lowpass: Array2<f64>,
    pub input_shape: (usize, usize),
    /// Rows/columns duplicated to reach an even input size.
    pub padding: (usize, usize),
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.subbands.len() / 6
    }

    pub fn subband(&self, scale: usize, orientation: Orientation) -> &ComplexSubband {
        &self.subbands[(scale - 1) * 6 + orientation.index()]
    }

    pub fn scale_bands(&self, scale: usize) -> &[ComplexSubband] {
        &self.subbands[(scale - 1) * 6..scale * 6]
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// `out[n] = Σ_k h[k] · s[n + len(h) − 1 − k]` over the valid range.
fn convolve_valid(s: &[f64], h: &[f64]) -> Vec<f64> {
    let m = h.len();
    if s.len() < m {
        return Vec::new();
    }
    (0..=s.len() - m)
        .map(|n| {
            h.iter()
                .enumerate()
                .map(|(k, hk)| hk * s[n + m - 1 - k])
                .sum()
        })
        .collect()
}

/// Undecimated filtering with symmetric extension. Odd-length filters keep
/// the length, even-length filters add one sample.
fn filter_lane(x: &[f64], h: &[f64]) -> Vec<f64> {
    let r = x.len();
    let m2 = h.len() / 2;
    let ext: Vec<f64> = (0..r + 2 * m2)
        .map(|i| x[reflect_index(i as isize - m2 as isize, r)])
        .collect();
    convolve_valid(&ext, h)
}

/// Decimate-by-two q-shift filtering: `ha` on one phase, `hb` on the other,
/// results interleaved. Requires `x.len() % 4 == 0`.
fn decimate_lane(x: &[f64], ha: &[f64], hb: &[f64]) -> Vec<f64> {
    let r = x.len();
    let m = ha.len();
    let ext: Vec<f64> = (0..r + 2 * m)
        .map(|i| x[reflect_index(i as isize - m as isize, r)])
        .collect();
    let t: Vec<usize> = (5..r + 2 * m - 2).step_by(4).collect();
    let pick = |off: usize| t.iter().map(|&ti| ext[ti - off]).collect::<Vec<_>>();
    let even = |h: &[f64]| h.iter().step_by(2).copied().collect::<Vec<_>>();
    let odd = |h: &[f64]| h.iter().skip(1).step_by(2).copied().collect::<Vec<_>>();

    let ya: Vec<f64> = convolve_valid(&pick(1), &even(ha))
        .into_iter()
        .zip(convolve_valid(&pick(3), &odd(ha)))
        .map(|(a, b)| a + b)
        .collect();
    let yb: Vec<f64> = convolve_valid(&pick(0), &even(hb))
        .into_iter()
        .zip(convolve_valid(&pick(2), &odd(hb)))
        .map(|(a, b)| a + b)
        .collect();

    let a_first = ha.iter().zip(hb).map(|(a, b)| a * b).sum::<f64>() > 0.0;
    let mut y = vec![0.0; r / 2];
    for (q, (a, b)) in ya.into_iter().zip(yb).enumerate() {
        if a_first {
            y[2 * q] = a;
            y[2 * q + 1] = b;
        } else {
            y[2 * q] = b;
            y[2 * q + 1] = a;
        }
    }
    y
}

/// Applies a 1D lane operation along `axis` of a 2D grid.
fn along_axis<F>(x: &Array2<f64>, axis: usize, op: F) -> Array2<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let lanes = x.lanes(Axis(axis));
    let outputs: Vec<Vec<f64>> = lanes
        .into_iter()
        .map(|lane| op(&lane.to_vec()))
        .collect();
    let out_len = outputs.first().map_or(0, Vec::len);
    let (rows, cols) = x.dim();
    if axis == 0 {
        Array2::from_shape_fn((out_len, cols), |(i, j)| outputs[j][i])
    } else {
        Array2::from_shape_fn((rows, out_len), |(i, j)| outputs[i][j])
    }
}

/// Quad-sampled pair of trees to two complex bands (p − q, p + q).
fn quads_to_complex(y: &Array2<f64>) -> (Array2<Complex64>, Array2<Complex64>) {
    let (r, c) = y.dim();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let shape = (r / 2, c / 2);
    let mut lo = Array2::zeros(shape);
    let mut hi = Array2::zeros(shape);
    for a in 0..r / 2 {
        for b in 0..c / 2 {
            let p = Complex64::new(y[[2 * a, 2 * b]] * s, y[[2 * a, 2 * b + 1]] * s);
            let q = Complex64::new(y[[2 * a + 1, 2 * b + 1]] * s, -y[[2 * a + 1, 2 * b]] * s);
            lo[[a, b]] = p - q;
            hi[[a, b]] = p + q;
        }
    }
    (lo, hi)
}

fn pad_edges_to_multiple_of_four(x: Array2<f64>) -> Array2<f64> {
    let (r, c) = x.dim();
    let x = if r % 4 != 0 {
        let mut out = Array2::zeros((r + 2, c));
        out.row_mut(0).assign(&x.row(0));
        out.slice_mut(ndarray::s![1..r + 1, ..]).assign(&x);
        out.row_mut(r + 1).assign(&x.row(r - 1));
        out
    } else {
        x
    };
    let (r, c) = x.dim();
    if c % 4 != 0 {
        let mut out = Array2::zeros((r, c + 2));
        out.column_mut(0).assign(&x.column(0));
        out.slice_mut(ndarray::s![.., 1..c + 1]).assign(&x);
        out.column_mut(c + 1).assign(&x.column(c - 1));
        out
    } else {
        x
    }
}

fn push_level(
    subbands: &mut Vec<ComplexSubband>,
    scale: usize,
    horizontal: &Array2<f64>,
    diagonal: &Array2<f64>,
    vertical: &Array2<f64>,
) {
    let (h_lo, h_hi) = quads_to_complex(horizontal);
    let (d_lo, d_hi) = quads_to_complex(diagonal);
    let (v_lo, v_hi) = quads_to_complex(vertical);
    // Band order 15°, 45°, 75°, 105°, 135°, 165°.
    let bands = [h_lo, d_lo, v_lo, v_hi, d_hi, h_hi];
    for (i, data) in bands.into_iter().enumerate() {
        subbands.push(ComplexSubband {
            scale,
            orientation: Orientation::ALL[i],
            data,
        });
    }
}

/// Forward J-level 2D dual-tree decomposition of one real channel.
pub fn dtcwt_forward(
    channel: ArrayView2<'_, f64>,
    levels: usize,
    bank: &FilterBank,
) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(ShdlError::Dimension("at least one level is required".into()));
    }
    let (h, w) = channel.dim();
    if h == 0 || w == 0 {
        return Err(ShdlError::Dimension("empty input grid".into()));
    }
    if channel.iter().any(|v| !v.is_finite()) {
        return Err(ShdlError::Validation("non-finite value in wavelet input".into()));
    }
    let pad = (h % 2, w % 2);
    let (ph, pw) = (h + pad.0, w + pad.1);
    let min_side = 1usize << levels;
    if ph < min_side || pw < min_side {
        return Err(ShdlError::Dimension(format!(
            "{h}x{w} input is too small for {levels} levels (needs >= {min_side} per side)"
        )));
    }
    let x = Array2::from_shape_fn((ph, pw), |(i, j)| channel[[i.min(h - 1), j.min(w - 1)]]);

    let l1 = &bank.level1;
    let q = &bank.qshift;
    let mut subbands = Vec::with_capacity(6 * levels);

    let lo = along_axis(&x, 0, |s| filter_lane(s, &l1.lowpass));
    let hi = along_axis(&x, 0, |s| filter_lane(s, &l1.highpass));
    let mut lolo = along_axis(&lo, 1, |s| filter_lane(s, &l1.lowpass));
    push_level(
        &mut subbands,
        1,
        &along_axis(&hi, 1, |s| filter_lane(s, &l1.lowpass)),
        &along_axis(&hi, 1, |s| filter_lane(s, &l1.highpass)),
        &along_axis(&lo, 1, |s| filter_lane(s, &l1.highpass)),
    );

    for scale in 2..=levels {
        let padded = pad_edges_to_multiple_of_four(lolo);
        let lo = along_axis(&padded, 0, |s| decimate_lane(s, &q.lowpass_b, &q.lowpass_a));
        let hi = along_axis(&padded, 0, |s| decimate_lane(s, &q.highpass_b, &q.highpass_a));
        lolo = along_axis(&lo, 1, |s| decimate_lane(s, &q.lowpass_b, &q.lowpass_a));
        push_level(
            &mut subbands,
            scale,
            &along_axis(&hi, 1, |s| decimate_lane(s, &q.lowpass_b, &q.lowpass_a)),
            &along_axis(&hi, 1, |s| decimate_lane(s, &q.highpass_b, &q.highpass_a)),
            &along_axis(&lo, 1, |s| decimate_lane(s, &q.highpass_b, &q.highpass_a)),
        );
    }

    Ok(WaveletPyramid {
        subbands,
        lowpass: lolo,
        input_shape: (h, w),
        padding: pad,
    })
}

/// Elementwise complex modulus.
pub fn modulus(subband: &ComplexSubband) -> Result<Array2<f64>> {
    if subband.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(ShdlError::Validation("non-finite subband coefficient".into()));
    }
    Ok(subband.data.mapv(|z| z.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_filters_have_sqrt2_dc_gain() {
        for family in FILTER_FAMILIES {
            let bank = build_filter_bank(family).unwrap();
            for taps in [
                &bank.level1.lowpass,
                &bank.qshift.lowpass_a,
                &bank.qshift.lowpass_b,
            ] {
                let dc: f64 = taps.iter().sum();
                assert!((dc - SQRT_2).abs() < 1e-10, "{family}: dc gain {dc}");
            }
        }
    }

    #[test]
    fn default_family_tap_counts() {
        let bank = build_filter_bank("default").unwrap();
        assert_eq!(bank.level1.lowpass.len(), 13);
        assert_eq!(bank.level1.highpass.len(), 19);
        assert_eq!(bank.qshift.lowpass_a.len(), 14);
        assert_eq!(bank.qshift.highpass_b.len(), 14);
    }

    #[test]
    fn unknown_family_is_config_error() {
        let err = build_filter_bank("haar2x").unwrap_err();
        assert!(matches!(err, ShdlError::Config(_)));
    }

    #[test]
    fn subband_sizes_halve_per_level() {
        let bank = build_filter_bank("default").unwrap();
        let img = Array2::from_shape_fn((64, 64), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let pyr = dtcwt_forward(img.view(), 5, &bank).unwrap();
        assert_eq!(pyr.subbands.len(), 30);
        for (j, side) in [32, 16, 8, 4, 2].into_iter().enumerate() {
            for band in pyr.scale_bands(j + 1) {
                assert_eq!(band.data.dim(), (side, side));
            }
        }
        assert_eq!(pyr.lowpass.dim(), (4, 4));
    }

    #[test]
    fn odd_inputs_round_up() {
        let bank = build_filter_bank("default").unwrap();
        let img = Array2::from_shape_fn((33, 21), |(i, j)| (i as f64).sin() + j as f64 * 0.1);
        let pyr = dtcwt_forward(img.view(), 3, &bank).unwrap();
        assert_eq!(pyr.padding, (1, 1));
        assert_eq!(pyr.subband(1, Orientation::Deg15).data.dim(), (17, 11));
        assert_eq!(pyr.subband(2, Orientation::Deg15).data.dim(), (9, 6));
        assert_eq!(pyr.subband(3, Orientation::Deg15).data.dim(), (5, 3));
    }

    #[test]
    fn constant_image_lives_in_lowpass() {
        let bank = build_filter_bank("default").unwrap();
        let c = 3.25;
        let img = Array2::from_elem((32, 32), c);
        let pyr = dtcwt_forward(img.view(), 4, &bank).unwrap();
        for band in &pyr.subbands {
            let peak = band.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
            // The published q-shift high-pass taps sum to about -9.3e-7.
            let bound = 1e-5 * c * 2f64.powi(band.scale as i32);
            assert!(peak < bound, "scale {} {:?}: {peak}", band.scale, band.orientation);
        }
        // 2D gain of 2 per level.
        let gain = 2f64.powi(4);
        assert!(pyr.lowpass.iter().all(|v| (v - c * gain).abs() < 1e-9 * c * gain));
    }

    #[test]
    fn too_small_and_non_finite_inputs_fail() {
        let bank = build_filter_bank("default").unwrap();
        let small = Array2::<f64>::zeros((8, 8));
        assert!(matches!(
            dtcwt_forward(small.view(), 4, &bank),
            Err(ShdlError::Dimension(_))
        ));
        let mut bad = Array2::<f64>::zeros((16, 16));
        bad[[3, 3]] = f64::NAN;
        assert!(matches!(
            dtcwt_forward(bad.view(), 2, &bank),
            Err(ShdlError::Validation(_))
        ));
    }

    #[test]
    fn modulus_of_three_four_is_five() {
        let band = ComplexSubband {
            scale: 1,
            orientation: Orientation::Deg45,
            data: Array2::from_elem((2, 2), Complex64::new(3.0, 4.0)),
        };
        assert!(modulus(&band).unwrap().iter().all(|&v| v == 5.0));
        let zero = ComplexSubband {
            data: Array2::zeros((3, 3)),
            ..band
        };
        assert!(modulus(&zero).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reflect_repeats_end_samples() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    // Reference coefficients from the Python `dtcwt` package (near_sym_b /
    // qshift_b), doubled to account for the √2 level-1 rescaling.
    const REFERENCE_BANDS: [(usize, usize, usize, usize, f64, f64); 36] = [
        (1, 2, 3, 0, 0.42940247787422836, 0.31829700079655343),
        (1, 2, 3, 1, 0.016878130182776233, 0.20535792556923851),
        (1, 2, 3, 2, 0.19140020622396237, -0.0024880443975817002),
        (1, 2, 3, 3, -0.05316039705423542, -0.005900682995918919),
        (1, 2, 3, 4, -0.01491305811716383, -0.04447960309780297),
        (1, 2, 3, 5, -0.023949905754143463, 0.18933217917337586),
        (1, 7, 1, 0, -0.01154107778652571, 0.036003629493728095),
        (1, 7, 1, 1, -0.003987546992963554, -0.004339976227440553),
        (1, 7, 1, 2, 0.39373803556365905, -0.02253662294155484),
        (1, 7, 1, 3, 0.3847091707651872, -0.5338252549687803),
        (1, 7, 1, 4, -0.012462158529748593, 0.0022370072887554836),
        (1, 7, 1, 5, 0.04146231312298021, 0.01404681759915908),
        (2, 1, 2, 0, -0.1340127345656345, 0.15624103931777997),
        (2, 1, 2, 1, -0.49700534997279, 0.04128413833202378),
        (2, 1, 2, 2, -0.04127394550810457, 0.09137744596304953),
        (2, 1, 2, 3, 0.034495927558868454, 0.03967201009318732),
        (2, 1, 2, 4, 0.00397770952877044, 0.0051095500076078285),
        (2, 1, 2, 5, -0.0857500972835664, -0.11754957271691975),
        (2, 4, 4, 0, 0.37632553747381514, -0.04667135089255589),
        (2, 4, 4, 1, -0.26159247089289484, 0.085789698971119),
        (2, 4, 4, 2, -0.16212349459515346, -0.09898280719401432),
        (2, 4, 4, 3, 0.1416451091357982, 0.135751994235236),
        (2, 4, 4, 4, -0.062190756845610234, 0.25673735301118195),
        (2, 4, 4, 5, 0.04206750498638981, 0.1497507231677833),
        (3, 0, 1, 0, 2.442669036689691, -0.23394289940424218),
        (3, 0, 1, 1, -0.26940899974979365, -0.07857243359690398),
        (3, 0, 1, 2, 0.38028100777194584, -0.2864620426011052),
        (3, 0, 1, 3, -0.3033127274742218, -0.26164188307379177),
        (3, 0, 1, 4, 0.0588762440180154, -0.24267796380378343),
        (3, 0, 1, 5, 0.23283644657900116, 1.5546313741791096),
        (3, 2, 2, 0, 1.1377254348036332, -2.5267858600740296),
        (3, 2, 2, 1, 0.15519414169974827, 0.03218469944883314),
        (3, 2, 2, 2, -0.3607925818093224, -0.13113191899063956),
        (3, 2, 2, 3, 0.16825586065843867, 0.10330552279933675),
        (3, 2, 2, 4, -0.15997753139054027, 0.042743002041857346),
        (3, 2, 2, 5, -1.7261505313940266, 1.2812768947287658),
    ];
    const REFERENCE_LOWPASS: [(usize, usize, f64); 3] = [
        (0, 0, 4.864110746343122),
        (1, 3, 5.643557578366024),
        (4, 2, 0.12718036227929708),
    ];

    #[test]
    fn matches_reference_implementation() {
        let bank = build_filter_bank("default").unwrap();
        let img = Array2::from_shape_fn((20, 18), |(r, c)| {
            let (r, c) = (r as f64, c as f64);
            (0.3 * r + 0.1 * c).sin() + 0.05 * r - 0.02 * c * c / 16.0
                + 0.3 * (1.7 * r * c / 7.0).cos()
        });
        let pyr = dtcwt_forward(img.view(), 3, &bank).unwrap();
        assert_eq!(pyr.subband(1, Orientation::Deg15).data.dim(), (10, 9));
        assert_eq!(pyr.subband(2, Orientation::Deg15).data.dim(), (5, 5));
        assert_eq!(pyr.subband(3, Orientation::Deg15).data.dim(), (3, 3));
        assert_eq!(pyr.lowpass.dim(), (6, 6));
        for (scale, i, j, o, re, im) in REFERENCE_BANDS {
            let z = pyr.subband(scale, Orientation::ALL[o]).data[[i, j]];
            assert!((z.re - re).abs() < 1e-12 && (z.im - im).abs() < 1e-12,
                "scale {scale} ({i},{j}) band {o}: {z} vs {re}{im:+}i");
        }
        for (i, j, v) in REFERENCE_LOWPASS {
            assert!((pyr.lowpass[[i, j]] - v).abs() < 1e-12);
        }
    }
}
