//! Distortion and success metrics: attack success rate, PSNR, L1 and
//! max-absolute distortion, and the transferability decision rule. All pure
//! functions.

use crate::data::PatchSample;
use crate::error::{Error, Result};
use crate::model::{batch_tensor, Model};
use crate::tensor::Tensor32;

/// Attack success rate from label triples.
///
/// The eligible set is the samples the model classified correctly on the
/// *original* input; the rate is the fraction of those whose adversarial
/// counterpart is misclassified. `None` when no sample is eligible (never
/// 0/0).
pub fn asr_from_labels(
    predicted_original: &[u8],
    predicted_adversarial: &[u8],
    true_labels: &[u8],
) -> Result<Option<f64>> {
    if predicted_original.len() != predicted_adversarial.len()
        || predicted_original.len() != true_labels.len()
    {
        return Err(Error::shape(
            "asr",
            format!(
                "lists of {} / {} / {} entries",
                predicted_original.len(),
                predicted_adversarial.len(),
                true_labels.len()
            ),
        ));
    }
    let mut eligible = 0usize;
    let mut fooled = 0usize;
    for ((&po, &pa), &y) in predicted_original.iter().zip(predicted_adversarial).zip(true_labels) {
        if po == y {
            eligible += 1;
            if pa != y {
                fooled += 1;
            }
        }
    }
    Ok((eligible > 0).then(|| fooled as f64 / eligible as f64))
}

/// [`asr_from_labels`] with the model evaluating both input lists in batches
/// of `batch` samples.
pub fn asr(
    model: &Model,
    originals: &[PatchSample],
    adversarials: &[Tensor32],
    batch: usize,
) -> Result<Option<f64>> {
    if originals.len() != adversarials.len() {
        return Err(Error::shape(
            "asr",
            format!("{} originals vs {} adversarials", originals.len(), adversarials.len()),
        ));
    }
    let true_labels: Vec<u8> = originals.iter().map(|s| s.label).collect();
    let refs: Vec<&PatchSample> = originals.iter().collect();
    let mut po = Vec::with_capacity(originals.len());
    for chunk in refs.chunks(batch.max(1)) {
        po.extend(model.predict(&batch_tensor(chunk)?)?.labels);
    }
    let mut pa = Vec::with_capacity(adversarials.len());
    for chunk in adversarials.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * chunk[0].numel());
        for t in chunk {
            data.extend_from_slice(t.data());
        }
        let shape = [chunk.len(), 1, crate::data::PATCH_SIDE, crate::data::PATCH_SIDE];
        pa.extend(model.predict(&crate::tensor::Tensor::new(shape, data)?)?.labels);
    }
    asr_from_labels(&po, &pa, &true_labels)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the inputs match.
pub fn psnr(x: &Tensor32, y: &Tensor32, peak: f64) -> Result<f64> {
    let mse = mse(x, y)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(x: &Tensor32, y: &Tensor32) -> Result<f64> {
    same_shape("mse", x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / x.numel() as f64)
}

/// Mean absolute per-cell distortion (comparable across patch sizes).
pub fn l1_distortion(x: &Tensor32, y: &Tensor32) -> Result<f64> {
    same_shape("l1", x, y)?;
    let sum: f64 = x.data().iter().zip(y.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
    Ok(sum / x.numel() as f64)
}

/// Raw L1 sum, stored in reports alongside the per-cell mean.
pub fn l1_sum(x: &Tensor32, y: &Tensor32) -> Result<f64> {
    same_shape("l1", x, y)?;
    Ok(x.data().iter().zip(y.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum())
}

pub fn max_abs_distortion(x: &Tensor32, y: &Tensor32) -> Result<f64> {
    same_shape("max-abs", x, y)?;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .fold(0.0, f64::max))
}

fn same_shape(op: &'static str, x: &Tensor32, y: &Tensor32) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Transferability: strictly more than half of the eligible samples fool the
/// target network. `None` propagates an undefined ASR.
pub fn decide_transferable(asr_tn: Option<f64>) -> Option<bool> {
    asr_tn.map(|v| v > 0.5)
}

/// Metric block of one scenario run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioMetrics {
    pub asr_sn: Option<f64>,
    pub asr_tn: Option<f64>,
    /// Mean over eligible samples with finite PSNR; `inf` when every
    /// adversarial equals its original.
    pub mean_psnr_db: f64,
    pub mean_l1: f64,
    pub mean_l1_sum: f64,
    pub mean_linf: f64,
    pub n_eligible: usize,
    pub transferable: Option<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn patch(v: f32) -> Tensor32 {
        Tensor::filled([1, 64, 64], v)
    }

    #[test]
    fn asr_endpoints() {
        // all eligible, all fooled
        let po = vec![0, 1, 0, 1];
        let y = po.clone();
        let pa = vec![1, 0, 1, 0];
        assert_eq!(asr_from_labels(&po, &pa, &y).unwrap(), Some(1.0));
        // adversarials identical to originals: nothing fooled
        assert_eq!(asr_from_labels(&po, &po, &y).unwrap(), Some(0.0));
        // nothing eligible: undefined, not 0/0
        let wrong = vec![1, 0, 1, 0];
        assert_eq!(asr_from_labels(&wrong, &pa, &y).unwrap(), None);
    }

    #[test]
    fn asr_is_permutation_invariant() {
        let po = vec![0, 1, 1, 0, 1];
        let y = vec![0, 1, 0, 0, 1];
        let pa = vec![1, 1, 0, 0, 0];
        let base = asr_from_labels(&po, &pa, &y).unwrap();
        let perm = [4, 2, 0, 3, 1];
        let pick = |v: &[u8]| -> Vec<u8> { perm.iter().map(|&i| v[i]).collect() };
        assert_eq!(asr_from_labels(&pick(&po), &pick(&pa), &pick(&y)).unwrap(), base);
    }

    #[test]
    fn psnr_closed_forms() {
        let x = patch(0.5);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);

        // uniform |x-y| = 0.01 -> exactly 40 dB
        let y = patch(0.51);
        let db = psnr(&x, &y, 1.0).unwrap();
        assert!((db - 40.0).abs() < 1e-3, "{db}");

        // uniform difference 1/255 -> 20*log10(255)
        let y = patch(0.5 + 1.0 / 255.0);
        let db = psnr(&x, &y, 1.0).unwrap();
        assert!((db - 20.0 * 255.0f64.log10()).abs() < 1e-3, "{db}");
    }

    #[test]
    fn psnr_is_symmetric_and_monotone_in_mse() {
        let x = patch(0.3);
        let near = patch(0.31);
        let far = patch(0.4);
        assert_eq!(psnr(&x, &near, 1.0).unwrap(), psnr(&near, &x, 1.0).unwrap());
        assert!(psnr(&x, &near, 1.0).unwrap() > psnr(&x, &far, 1.0).unwrap());
    }

    #[test]
    fn distortion_closed_forms() {
        let x = patch(0.25);
        assert_eq!(l1_distortion(&x, &x).unwrap(), 0.0);
        assert_eq!(max_abs_distortion(&x, &x).unwrap(), 0.0);

        // 0.75 - 0.25 is exactly 0.5 in binary
        let mut y = x.clone();
        y.data_mut()[123] = 0.75;
        assert!((l1_distortion(&x, &y).unwrap() - 0.5 / 4096.0).abs() < 1e-12);
        assert!((l1_sum(&x, &y).unwrap() - 0.5).abs() < 1e-7);
        assert!((max_abs_distortion(&x, &y).unwrap() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = patch(0.2);
        let y = Tensor::filled([1, 32, 32], 0.2f32);
        assert!(matches!(psnr(&x, &y, 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn transferability_threshold_is_strict() {
        assert_eq!(decide_transferable(Some(0.63)), Some(true));
        assert_eq!(decide_transferable(Some(0.5)), Some(false));
        assert_eq!(decide_transferable(Some(0.0004)), Some(false));
        assert_eq!(decide_transferable(None), None);
    }
}
