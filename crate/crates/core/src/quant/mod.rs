//! Quantization schemes, configurations and the model quantizer.
//!
//! All schemes produce 8-bit signed codes: `q = clamp(round(v / scale + zp), -128, 127)`
//! and `v ≈ scale · (q − zp)`. `round` is half-away-from-zero throughout.
//! A range whose magnitude is zero yields `scale = 1, zp = 0`.

mod graph;
mod io;
mod kl;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calib::{SizeClass, TensorHistogram};
use crate::error::{Error, Result};
use crate::model::WeightTensor;

pub use graph::{fuse_conv_relu, model_size, quantize_model, QuantLayer, QuantizedGraph};
pub use io::{decode_quantized, encode_quantized, load_quantized, save_quantized, QUANT_MAGIC};
pub use kl::{clip_range_kl, TARGET_LEVELS};

pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantScheme {
    Asymmetric,
    Symmetric,
    SymmetricUint8,
    SymmetricPower2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clipping {
    Max,
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Tensor,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixedPrecision {
    Off,
    FirstLastFp32,
}

impl QuantScheme {
    pub const ALL: [QuantScheme; 4] =
        [QuantScheme::Asymmetric, QuantScheme::Symmetric, QuantScheme::SymmetricUint8, QuantScheme::SymmetricPower2];
}

impl Clipping {
    pub const ALL: [Clipping; 2] = [Clipping::Max, Clipping::Kl];
}

impl Granularity {
    pub const ALL: [Granularity; 2] = [Granularity::Tensor, Granularity::Channel];
}

impl MixedPrecision {
    pub const ALL: [MixedPrecision; 2] = [MixedPrecision::Off, MixedPrecision::FirstLastFp32];
}

macro_rules! kebab_names {
    ($($t:ty),*) => {$(
        impl $t {
            /// Variants are declared in `NAMES` order.
            pub fn name(self) -> &'static str {
                Self::NAMES[self as usize]
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .zip(Self::NAMES)
                    .find(|(_, n)| *n == s)
                    .map(|(v, _)| *v)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown value `{s}` (expected one of {})", Self::NAMES.join(", "))))
            }
        }
    )*};
}

impl QuantScheme {
    pub const NAMES: [&'static str; 4] = ["asymmetric", "symmetric", "symmetric-uint8", "symmetric-power2"];
}
impl Clipping {
    pub const NAMES: [&'static str; 2] = ["max", "kl"];
}
impl Granularity {
    pub const NAMES: [&'static str; 2] = ["tensor", "channel"];
}
impl MixedPrecision {
    pub const NAMES: [&'static str; 2] = ["off", "first-last-fp32"];
}

kebab_names!(QuantScheme, Clipping, Granularity, MixedPrecision);

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantConfig {
    pub cache: SizeClass,
    pub scheme: QuantScheme,
    pub clipping: Clipping,
    pub granularity: Granularity,
    pub mixed: MixedPrecision,
    /// Conv+ReLU fusion; only the integer-only profile exposes it.
    #[serde(default)]
    pub fusion: bool,
}

impl QuantConfig {
    pub fn new(cache: SizeClass, scheme: QuantScheme, clipping: Clipping, granularity: Granularity, mixed: MixedPrecision) -> Self {
        Self { cache, scheme, clipping, granularity, mixed, fusion: false }
    }

    pub fn with_fusion(mut self, fusion: bool) -> Self {
        self.fusion = fusion;
        self
    }
}

/// Comma-separated form, e.g. `S2,asymmetric,kl,channel,off` (append `,fused` for fusion).
impl fmt::Display for QuantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{}", self.cache, self.scheme, self.clipping, self.granularity, self.mixed)?;
        if self.fusion {
            f.write_str(",fused")?;
        }
        Ok(())
    }
}

impl FromStr for QuantConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let fusion = match parts.len() {
            5 => false,
            6 if parts[5] == "fused" => true,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "config `{s}` must be cache,scheme,clipping,granularity,mixed[,fused]"
                )))
            }
        };
        Ok(QuantConfig {
            cache: parts[0].parse()?,
            scheme: parts[1].parse()?,
            clipping: parts[2].parse()?,
            granularity: parts[3].parse()?,
            mixed: parts[4].parse()?,
            fusion,
        })
    }
}

/// Deployment target; restricts which configurations are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetProfile {
    Generic,
    IntegerOnly,
}

impl TargetProfile {
    pub fn schemes(self) -> &'static [QuantScheme] {
        match self {
            TargetProfile::Generic => &QuantScheme::ALL,
            TargetProfile::IntegerOnly => &[QuantScheme::SymmetricPower2],
        }
    }

    pub fn granularities(self) -> &'static [Granularity] {
        match self {
            TargetProfile::Generic => &Granularity::ALL,
            TargetProfile::IntegerOnly => &[Granularity::Tensor],
        }
    }

    pub fn mixed_modes(self) -> &'static [MixedPrecision] {
        match self {
            TargetProfile::Generic => &MixedPrecision::ALL,
            TargetProfile::IntegerOnly => &[MixedPrecision::Off],
        }
    }

    pub fn has_fusion_toggle(self) -> bool {
        self == TargetProfile::IntegerOnly
    }

    pub fn check(self, cfg: &QuantConfig) -> Result<()> {
        let fail = |reason: String| Err(Error::ProfileViolation { profile: self.to_string(), reason });
        if !self.schemes().contains(&cfg.scheme) {
            return fail(format!("scheme {}", cfg.scheme));
        }
        if !self.granularities().contains(&cfg.granularity) {
            return fail(format!("granularity {}", cfg.granularity));
        }
        if !self.mixed_modes().contains(&cfg.mixed) {
            return fail(format!("mixed precision {}", cfg.mixed));
        }
        if cfg.fusion && !self.has_fusion_toggle() {
            return fail("fusion".into());
        }
        Ok(())
    }
}

impl fmt::Display for TargetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetProfile::Generic => "generic",
            TargetProfile::IntegerOnly => "integer-only",
        })
    }
}

impl FromStr for TargetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(TargetProfile::Generic),
            "integer-only" => Ok(TargetProfile::IntegerOnly),
            _ => Err(Error::InvalidArgument(format!("unknown profile `{s}` (generic, integer-only)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub const UNIT: QuantParams = QuantParams { scale: 1.0, zero_point: 0 };

    pub fn quantize(&self, v: f32) -> i8 {
        let q = (v as f64 / self.scale as f64 + self.zero_point as f64).round();
        q.clamp(QMIN as f64, QMAX as f64) as i8
    }

    pub fn dequantize(&self, q: i8) -> f32 {
        self.scale * (q as i32 - self.zero_point) as f32
    }

    /// `Some(e)` when the scale is exactly `2^e`.
    pub fn log2_scale(&self) -> Option<i32> {
        let s = self.scale;
        if !(s.is_normal() && s > 0.0) {
            return None;
        }
        let bits = s.to_bits();
        (bits & 0x007f_ffff == 0).then(|| ((bits >> 23) & 0xff) as i32 - 127)
    }
}

fn check_finite(a: f32, b: f32) -> Result<()> {
    if a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(a, b))
    }
}

/// `span / levels` rounded up to the next f32 so that `scale · levels ≥ span`.
fn scale_for(span: f32, levels: f64) -> f32 {
    let exact = span as f64 / levels;
    let s = exact as f32;
    if (s as f64) < exact {
        s.next_up()
    } else {
        s
    }
}

/// Affine scheme. The range is widened to include zero so 0.0 is exactly representable.
pub fn params_asymmetric(min: f32, max: f32) -> Result<QuantParams> {
    check_finite(min, max)?;
    if min > max {
        return Err(Error::InvalidArgument(format!("min {min} > max {max}")));
    }
    let (lo, hi) = (min.min(0.0), max.max(0.0));
    if hi == lo {
        return Ok(QuantParams::UNIT);
    }
    let scale = scale_for(hi - lo, 255.0);
    let zp = -((lo as f64 / scale as f64).round() as i32) - 128;
    Ok(QuantParams { scale, zero_point: zp.clamp(QMIN, QMAX) })
}

pub fn params_symmetric(max_abs: f32) -> Result<QuantParams> {
    check_finite(max_abs, max_abs)?;
    let max_abs = max_abs.abs();
    if max_abs == 0.0 {
        return Ok(QuantParams::UNIT);
    }
    Ok(QuantParams { scale: scale_for(max_abs, 127.0), zero_point: 0 })
}

/// Uses all 256 codes for nonnegative ranges, otherwise falls back to [`params_symmetric`].
pub fn params_symmetric_uint8(min: f32, max_abs: f32) -> Result<QuantParams> {
    check_finite(min, max_abs)?;
    let max_abs = max_abs.abs();
    if max_abs == 0.0 {
        return Ok(QuantParams::UNIT);
    }
    if min >= 0.0 {
        Ok(QuantParams { scale: scale_for(max_abs, 255.0), zero_point: -128 })
    } else {
        params_symmetric(max_abs)
    }
}

/// Smallest power of two not below the symmetric scale.
pub fn params_power2(max_abs: f32) -> Result<QuantParams> {
    check_finite(max_abs, max_abs)?;
    let max_abs = max_abs.abs();
    if max_abs == 0.0 {
        return Ok(QuantParams::UNIT);
    }
    let target = max_abs as f64 / 127.0;
    let mut e = target.log2().ceil() as i32;
    // Correct for log2 rounding on exact powers of two.
    while 2f64.powi(e - 1) >= target {
        e -= 1;
    }
    while 2f64.powi(e) < target {
        e += 1;
    }
    let scale = 2f32.powi(e);
    if !scale.is_normal() {
        return Err(Error::NonFinite(max_abs, scale));
    }
    Ok(QuantParams { scale, zero_point: 0 })
}

/// Parameters for a `[min, max]` range under `scheme`.
pub fn params_for_range(scheme: QuantScheme, min: f32, max: f32) -> Result<QuantParams> {
    check_finite(min, max)?;
    let max_abs = min.abs().max(max.abs());
    match scheme {
        QuantScheme::Asymmetric => params_asymmetric(min, max),
        QuantScheme::Symmetric => params_symmetric(max_abs),
        QuantScheme::SymmetricUint8 => params_symmetric_uint8(min, max_abs),
        QuantScheme::SymmetricPower2 => params_power2(max_abs),
    }
}

pub fn clip_range_max(h: &TensorHistogram) -> (f32, f32) {
    (h.min_seen, h.max_seen)
}

pub fn clip_range(h: &TensorHistogram, clipping: Clipping) -> Result<(f32, f32)> {
    match clipping {
        Clipping::Max => Ok(clip_range_max(h)),
        Clipping::Kl => h.kl_range(),
    }
}

/// Int8 weight codes with one parameter set per tensor or per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub codes: Vec<i8>,
    pub params: Vec<QuantParams>,
}

impl QuantizedWeights {
    /// Parameters governing flat element `i`.
    pub fn params_at(&self, i: usize) -> QuantParams {
        self.params[i * self.params.len() / self.codes.len()]
    }
}

/// Quantizes a weight tensor over its exact range; axis 0 is the output channel.
pub fn quantize_weights(w: &WeightTensor, scheme: QuantScheme, granularity: Granularity) -> Result<QuantizedWeights> {
    let groups = match granularity {
        Granularity::Tensor => 1,
        Granularity::Channel => w.shape.first().copied().unwrap_or(1).max(1),
    };
    let per = w.data.len() / groups;
    let mut codes = Vec::with_capacity(w.data.len());
    let mut params = Vec::with_capacity(groups);
    for chunk in w.data.chunks(per.max(1)) {
        let (lo, hi) = chunk.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let p = params_for_range(scheme, lo, hi)?;
        codes.extend(chunk.iter().map(|&v| p.quantize(v)));
        params.push(p);
    }
    Ok(QuantizedWeights { codes, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetric_examples() {
        let p = params_asymmetric(0.0, 25.5).unwrap();
        assert_eq!(p.scale, 0.1);
        assert_eq!(p.zero_point, -128);
        assert_eq!(p.quantize(0.0), -128);
        assert_eq!(p.quantize(25.5), 127);
        let p = params_asymmetric(-1.0, 1.0).unwrap();
        assert!((p.scale - 2.0 / 255.0).abs() < 1e-9);
        assert_eq!(p.quantize(0.0) as i32, p.zero_point);
    }

    #[test]
    fn symmetric_examples() {
        let p = params_symmetric(12.7).unwrap();
        assert_eq!(p.scale, 0.1);
        assert_eq!(p.quantize(1.0), 10);
        assert!((p.dequantize(10) - 1.0).abs() < 1e-6);
        let skew = params_symmetric(100.0).unwrap();
        for v in [-0.01f32, -0.005, 0.0] {
            assert!((-1..=0).contains(&(skew.quantize(v) as i32)));
        }
    }

    #[test]
    fn uint8_branches() {
        let p = params_symmetric_uint8(0.5, 25.5).unwrap();
        assert_eq!((p.scale, p.zero_point), (0.1, -128));
        assert_eq!(params_symmetric_uint8(-3.0, 3.0).unwrap(), params_symmetric(3.0).unwrap());
    }

    #[test]
    fn power2_examples() {
        assert_eq!(params_power2(127.0).unwrap().scale, 1.0);
        assert_eq!(params_power2(100.0).unwrap().scale, 1.0);
        assert_eq!(params_power2(128.0).unwrap().scale, 2.0);
        assert_eq!(params_power2(0.5).unwrap().log2_scale(), Some(-7));
    }

    #[test]
    fn degenerate_ranges_use_unit_scale() {
        for s in QuantScheme::ALL {
            assert_eq!(params_for_range(s, 0.0, 0.0).unwrap(), QuantParams::UNIT);
        }
        assert!(matches!(params_asymmetric(f32::NAN, 1.0), Err(Error::NonFinite(..))));
    }

    #[test]
    fn zero_weights_give_zero_codes() {
        let w = WeightTensor::new(vec![2, 1, 2, 2], vec![0.0; 8]);
        for s in QuantScheme::ALL {
            for g in Granularity::ALL {
                assert!(quantize_weights(&w, s, g).unwrap().codes.iter().all(|&c| c == 0));
            }
        }
        assert_eq!(quantize_weights(&w, QuantScheme::Symmetric, Granularity::Channel).unwrap().params.len(), 2);
    }

    #[test]
    fn config_text_round_trip() {
        let c = QuantConfig::new(SizeClass::S2, QuantScheme::SymmetricUint8, Clipping::Kl, Granularity::Channel, MixedPrecision::FirstLastFp32);
        assert_eq!(c.to_string(), "S2,symmetric-uint8,kl,channel,first-last-fp32");
        assert_eq!(c.to_string().parse::<QuantConfig>().unwrap(), c);
        let f = c.with_fusion(true);
        assert_eq!(f.to_string().parse::<QuantConfig>().unwrap(), f);
        assert!("S2,bogus,kl,channel,off".parse::<QuantConfig>().is_err());
    }

    #[test]
    fn profile_rules() {
        let base = QuantConfig::new(SizeClass::S1, QuantScheme::SymmetricPower2, Clipping::Max, Granularity::Tensor, MixedPrecision::Off);
        TargetProfile::IntegerOnly.check(&base.with_fusion(true)).unwrap();
        assert!(TargetProfile::Generic.check(&base.with_fusion(true)).is_err());
        let asym = QuantConfig { scheme: QuantScheme::Asymmetric, ..base };
        assert!(matches!(TargetProfile::IntegerOnly.check(&asym), Err(Error::ProfileViolation { .. })));
    }
}
