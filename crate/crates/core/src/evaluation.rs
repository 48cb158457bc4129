//! Point-prediction metrics and normal Q-Q diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    #[default]
    Normalized,
    Original,
}

impl std::str::FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Units::Normalized),
            "original" => Ok(Units::Original),
            other => Err(Error::Config(format!(
                "units must be `normalized` or `original`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub units: Units,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the truths have zero variance.
    pub r_squared: Option<f64>,
    pub p90_abs_error: f64,
    pub p95_abs_error: f64,
    pub p98_abs_error: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("no predictions to evaluate".into()));
    }
    Ok(())
}

pub fn metrics(predicted: &[f64], truths: &[f64], units: Units) -> Result<EvalReport> {
    check_pair(predicted, truths)?;
    let n = truths.len() as f64;
    let errors: Vec<f64> = predicted.iter().zip(truths).map(|(p, t)| p - t).collect();
    let sse: f64 = errors.iter().map(|e| e * e).sum();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let mean_t = truths.iter().sum::<f64>() / n;
    let sst: f64 = truths.iter().map(|t| (t - mean_t) * (t - mean_t)).sum();
    let rmse = (sse / n).sqrt();
    let mae = abs.iter().sum::<f64>() / n;
    Ok(EvalReport {
        n: truths.len(),
        units,
        rmse,
        mae,
        r_squared: (sst > 0.0).then(|| 1.0 - sse / sst),
        p90_abs_error: error_percentile(&abs, 90.0)?,
        p95_abs_error: error_percentile(&abs, 95.0)?,
        p98_abs_error: error_percentile(&abs, 98.0)?,
    })
}

/// Linear-interpolation quantile of `values` at level `q` percent, using
/// order-statistic index `h = (n - 1) q / 100`.
pub fn error_percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of no values".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("percentile level {q} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Sorted standardized residuals paired with standard-normal quantiles at
/// plotting positions `(i - 0.5) / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    pub theoretical: Vec<f64>,
    pub sample: Vec<f64>,
}

impl QqData {
    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }

    /// Largest `|sample - theoretical|` over pairs whose plotting position
    /// lies in `[lo, hi]`.
    pub fn max_gap(&self, lo: f64, hi: f64) -> f64 {
        let n = self.len() as f64;
        self.theoretical
            .iter()
            .zip(&self.sample)
            .enumerate()
            .filter(|(i, _)| {
                let p = (*i as f64 + 0.5) / n;
                p >= lo && p <= hi
            })
            .map(|(_, (t, s))| (s - t).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("theoretical,sample\n");
        for (t, s) in self.theoretical.iter().zip(&self.sample) {
            out.push_str(&format!("{t:?},{s:?}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn qq_data(means: &[f64], stds: &[f64], truths: &[f64]) -> Result<QqData> {
    check_pair(means, truths)?;
    check_pair(stds, truths)?;
    if let Some(s) = stds.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "predictive std must be positive, got {s}"
        )));
    }
    let mut sample: Vec<f64> = truths
        .iter()
        .zip(means)
        .zip(stds)
        .map(|((t, m), s)| (t - m) / s)
        .collect();
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let theoretical = (0..sample.len())
        .map(|i| inverse_normal_cdf((i as f64 + 0.5) / n))
        .collect::<Result<Vec<_>>>()?;
    Ok(QqData {
        theoretical,
        sample,
    })
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

fn horner(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Standard normal quantile function (Wichura's AS 241, double precision).
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * horner(&A, r) / horner(&B, r));
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        let r = r - 5.0;
        horner(&E, r) / horner(&F, r)
    };
    Ok(if q < 0.0 { -z } else { z })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let r = metrics(&[1.0, 2.0], &[1.0, 4.0], Units::Normalized).unwrap();
        assert!((r.rmse - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.mae, 1.0);
        let perfect = metrics(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0], Units::Normalized).unwrap();
        assert_eq!(
            (perfect.rmse, perfect.mae, perfect.r_squared, perfect.p98_abs_error),
            (0.0, 0.0, Some(1.0), 0.0)
        );
        let flat = metrics(&[1.0, 1.0], &[3.0, 3.0], Units::Normalized).unwrap();
        assert_eq!(flat.r_squared, None);
        assert!(metrics(&[], &[], Units::Normalized).is_err());
        assert!(metrics(&[1.0], &[1.0, 2.0], Units::Normalized).is_err());
    }

    #[test]
    fn percentile_examples() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert!((error_percentile(&v, 90.0).unwrap() - 3.6).abs() < 1e-12);
        assert_eq!(error_percentile(&[2.5], 37.0).unwrap(), 2.5);
        assert!((error_percentile(&v, 99.999).unwrap() - 4.0).abs() < 1e-3);
        assert!(error_percentile(&[], 50.0).is_err());
    }

    #[test]
    fn quantile_function_reference_values() {
        // high-precision reference values
        let cases = [
            (1e-9, -5.997_807_015_007_686_9),
            (1e-6, -4.753_424_308_822_899),
            (0.001, -3.090_232_306_167_813_5),
            (0.025, -1.959_963_984_540_054_2),
            (0.1, -1.281_551_565_544_600_4),
            (0.3, -0.524_400_512_708_040_8),
            (0.7, 0.524_400_512_708_040_7),
            (0.975, 1.959_963_984_540_053_9),
            (0.999, 3.090_232_306_167_813_3),
            (1.0 - 1e-6, 4.753_424_308_817_087_8),
        ];
        for (p, want) in cases {
            let got = inverse_normal_cdf(p).unwrap();
            assert!((got - want).abs() < 1e-12, "p={p}: {got} vs {want}");
        }
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
    }

    #[test]
    fn qq_small_cases() {
        let q = qq_data(&[1.0], &[2.0], &[3.0]).unwrap();
        assert_eq!((q.theoretical[0], q.sample[0]), (0.0, 1.0));
        let q = qq_data(&[0.0; 4], &[1.0; 4], &[0.0; 4]).unwrap();
        assert!(q.sample.iter().all(|&s| s == 0.0));
        assert!((q.theoretical[0] + q.theoretical[3]).abs() < 1e-15);
        assert!(qq_data(&[0.0], &[0.0], &[0.0]).is_err());
    }
}
