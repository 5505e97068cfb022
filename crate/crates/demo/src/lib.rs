//! Browser demo: generate a synthetic stack, remove its background with a
//! baseline or an SLNet model trained in the page, then localize and render.

use slnet_core::baselines::{median_subtract, rolling_ball_stack, RollingBallConfig};
use slnet_core::localize::{localize_stack, render, LocalizationTable, LocalizeParams};
use slnet_core::metrics::sparsity;
use slnet_core::slnet::{decompose, Hyperparams, Trainer};
use slnet_core::synth::{generate, SynthConfig};
use slnet_core::ImageStack;
use wasm_bindgen::prelude::*;

const PIXEL_SIZE_NM: f64 = 100.0;

#[wasm_bindgen]
pub struct Demo {
    raw: ImageStack,
    hp: Hyperparams,
    trainer: Option<Trainer>,
    sparse: Option<ImageStack>,
    low_rank: Option<ImageStack>,
    locs: Option<LocalizationTable>,
}

fn js(e: slnet_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// A 64x64 stack with the built-in three-blob background scaled by
    /// `background_scale`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, frames: usize, background_scale: f64) -> Result<Demo, JsError> {
        let mut cfg = SynthConfig {
            frames,
            seed: seed as u64,
            ..SynthConfig::default()
        };
        for pattern in &mut cfg.background {
            pattern.offset *= background_scale;
            for blob in &mut pattern.blobs {
                blob.peak *= background_scale;
            }
        }
        let (raw, _) = generate(&cfg).map_err(js)?;
        let hp = Hyperparams {
            triplet_offset: (frames.saturating_sub(1) / 2).clamp(1, 50),
            seed: seed as u64,
            ..Hyperparams::default()
        };
        Ok(Demo {
            raw,
            hp,
            trainer: None,
            sparse: None,
            low_rank: None,
            locs: None,
        })
    }

    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn height(&self) -> usize {
        self.raw.height()
    }

    pub fn frames(&self) -> usize {
        self.raw.len()
    }

    /// Replaces the current output with a baseline subtraction and returns its
    /// sparsity in percent. `method` is `median` or `rolling-ball`.
    pub fn baseline(&mut self, method: &str, radius: usize) -> Result<f64, JsError> {
        let out = match method {
            "median" => median_subtract(&self.raw),
            "rolling-ball" => rolling_ball_stack(&self.raw, &RollingBallConfig::new(radius)),
            other => return Err(JsError::new(&format!("unknown method '{other}'"))),
        }
        .map_err(js)?;
        self.set_output(out, None)
    }

    /// Runs one training epoch (starting a fresh model on first use) and
    /// returns the mean loss of that epoch.
    pub fn train_epoch(&mut self, alpha: f64) -> Result<f64, JsError> {
        if self.trainer.is_none() || self.hp.alpha != alpha {
            self.hp.alpha = alpha;
            self.trainer = Some(Trainer::new(&self.raw, &self.hp).map_err(js)?);
        }
        let rec = self.trainer.as_mut().expect("set above").run_epoch().map_err(js)?;
        Ok(rec.terms.total)
    }

    pub fn epochs_trained(&self) -> usize {
        self.trainer.as_ref().map_or(0, |t| t.epochs_done())
    }

    pub fn reset_model(&mut self) {
        self.trainer = None;
    }

    /// Decomposes the stack with the current model and returns the sparsity
    /// of the sparse part in percent.
    pub fn decompose(&mut self) -> Result<f64, JsError> {
        let trainer = self
            .trainer
            .as_ref()
            .ok_or_else(|| JsError::new("train at least one epoch first"))?;
        let d = decompose(trainer.model(), &self.raw, &self.hp).map_err(js)?;
        self.set_output(d.sparse, Some(d.low_rank))
    }

    /// Localizes emitters in the current output; returns the count.
    pub fn localize(&mut self) -> Result<usize, JsError> {
        let out = self
            .sparse
            .as_ref()
            .ok_or_else(|| JsError::new("remove the background first"))?;
        let table = localize_stack(out, &LocalizeParams::default(), PIXEL_SIZE_NM).map_err(js)?;
        let n = table.len();
        self.locs = Some(table);
        Ok(n)
    }

    /// RGBA pixels of frame `t` of `which` (`raw`, `sparse` or `lowrank`).
    pub fn frame_rgba(&self, which: &str, t: usize) -> Result<Vec<u8>, JsError> {
        let stack = match which {
            "raw" => Some(&self.raw),
            "sparse" => self.sparse.as_ref(),
            "lowrank" => self.low_rank.as_ref(),
            other => return Err(JsError::new(&format!("unknown view '{other}'"))),
        }
        .ok_or_else(|| JsError::new(&format!("no {which} stack yet")))?;
        if t >= stack.len() {
            return Err(JsError::new("frame out of range"));
        }
        let frame: Vec<f64> = stack.frame(t).iter().map(|&v| v as f64).collect();
        Ok(to_rgba(&frame))
    }

    /// RGBA histogram rendering of the localizations at `magnification`.
    pub fn render_rgba(&self, magnification: usize) -> Result<Vec<u8>, JsError> {
        let table = self.locs.as_ref().ok_or_else(|| JsError::new("localize first"))?;
        let img = render(table, magnification, self.raw.width(), self.raw.height()).map_err(js)?;
        Ok(to_rgba(img.data()))
    }

    fn set_output(&mut self, sparse: ImageStack, low_rank: Option<ImageStack>) -> Result<f64, JsError> {
        let s = sparsity(sparse.data()).map_err(js)?;
        self.sparse = Some(sparse);
        self.low_rank = low_rank;
        self.locs = None;
        Ok(s)
    }
}

/// Grey levels scaled so the 99.5th percentile is white; negatives are black.
fn to_rgba(values: &[f64]) -> Vec<u8> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted.first().copied().unwrap_or(0.0).max(0.0);
    let hi = sorted
        .get((sorted.len() as f64 * 0.995) as usize)
        .or(sorted.last())
        .copied()
        .unwrap_or(1.0);
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .flat_map(|&v| {
            let g = (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::to_rgba;

    #[test]
    fn grey_scale_clips_negatives_and_saturates_the_top() {
        let px = to_rgba(&[-5.0, 0.0, 50.0, 100.0]);
        assert_eq!(px.len(), 16);
        assert_eq!(&px[0..4], &[0, 0, 0, 255]);
        assert_eq!(px[8], 128);
        assert_eq!(&px[12..16], &[255, 255, 255, 255]);
        assert!(to_rgba(&[3.0; 4]).chunks(4).all(|c| c[3] == 255));
    }
}
