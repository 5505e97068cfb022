//! Sparse/low-rank split of a whole stack with a trained model.
//!
//! The stack is tiled with triplet windows `(t, t+d, t+2d)`. Frame `j` takes its
//! prediction from the first slot that holds it: slot 0 of window `j`, else
//! slot 1 of window `j-d`, else slot 2 of window `j-2d`. Frames that fall in no
//! valid triplet (only possible when the stack has fewer than `3d` frames) are
//! evaluated in their own window `(j, j+d, j+2d)` with indices clamped to the
//! last frame.

use crate::error::{Error, Result};
use crate::linalg::svt;
use crate::par;
use crate::rpca::{rpca_ialm, RpcaConfig};
use crate::stack::{FlatMatrix, ImageStack, StackMeta};

use super::model::SLNetModel;
use super::train::{triplet, triplet_count, Hyperparams};
use super::TRIPLET;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub low_rank: ImageStack,
    pub sparse: ImageStack,
}

/// A window to evaluate and the frames it is responsible for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub frames: [usize; TRIPLET],
    /// `(frame, slot)` pairs assigned from this window.
    pub assigned: Vec<(usize, usize)>,
}

/// Window tiling giving every frame exactly one prediction.
pub fn plan_windows(frames: usize, offset: usize) -> Result<Vec<WindowPlan>> {
    if offset == 0 {
        return Err(Error::param("triplet offset must be >= 1"));
    }
    if frames < 2 * offset + 1 {
        return Err(Error::StackTooShort {
            frames,
            needed: 2 * offset + 1,
            offset,
        });
    }
    let count = triplet_count(frames, offset);
    let mut plans: Vec<WindowPlan> = (0..count)
        .map(|t| WindowPlan {
            frames: triplet(t, offset),
            assigned: Vec::new(),
        })
        .collect();
    for j in 0..frames {
        let slot = (0..TRIPLET).find(|&s| j >= s * offset && j - s * offset < count);
        match slot {
            Some(s) => plans[j - s * offset].assigned.push((j, s)),
            None => {
                let last = frames - 1;
                plans.push(WindowPlan {
                    frames: [j, (j + offset).min(last), (j + 2 * offset).min(last)],
                    assigned: vec![(j, 0)],
                });
            }
        }
    }
    plans.retain(|p| !p.assigned.is_empty());
    Ok(plans)
}

fn gather(stack: &ImageStack, frames: &[usize; TRIPLET], scale: f64) -> Result<FlatMatrix> {
    let px = stack.pixels_per_frame();
    let mut data = Vec::with_capacity(TRIPLET * px);
    for &f in frames {
        data.extend(stack.frame(f).iter().map(|&v| v as f64 / scale));
    }
    FlatMatrix::new(TRIPLET, px, data)?.with_shape(TRIPLET, stack.height(), stack.width())
}

/// Assemble per-frame low-rank predictions (original intensity units) into the
/// result, with `S = max(M - L, 0)`.
fn assemble(stack: &ImageStack, mut per_frame: Vec<(usize, Vec<f32>)>) -> Result<DecompositionResult> {
    per_frame.sort_by_key(|(j, _)| *j);
    debug_assert!(per_frame.iter().enumerate().all(|(i, (j, _))| i == *j));
    let px = stack.pixels_per_frame();
    let mut low = Vec::with_capacity(stack.data().len());
    let mut sparse = Vec::with_capacity(stack.data().len());
    for (j, l) in &per_frame {
        let m = stack.frame(*j);
        for (&mv, &lv) in m.iter().zip(l) {
            low.push(lv);
            sparse.push((mv - lv).max(0.0));
        }
        debug_assert_eq!(l.len(), px);
    }
    let meta = StackMeta {
        bit_depth: None,
        ..stack.meta()
    };
    Ok(DecompositionResult {
        low_rank: ImageStack::new(stack.width(), stack.height(), low, meta)?,
        sparse: ImageStack::new(stack.width(), stack.height(), sparse, meta)?,
    })
}

/// `L = max(N(M), 0)` per window, `S = max(M - L, 0)`.
///
/// The network sees the stack divided by the scale recorded at training time.
/// With `hp.shrink_at_inference` the shrinkage is applied to the network output
/// before clamping.
pub fn decompose(model: &SLNetModel, stack: &ImageStack, hp: &Hyperparams) -> Result<DecompositionResult> {
    if model.frames() != TRIPLET {
        return Err(Error::Shape(format!(
            "model takes {} frames per window, decomposition uses triplets",
            model.frames()
        )));
    }
    let plans = plan_windows(stack.len(), hp.triplet_offset)?;
    let scale = model.provenance.input_scale;
    let px = stack.pixels_per_frame();
    let results = par::try_map_indexed(plans.len(), |w| -> Result<Vec<(usize, Vec<f32>)>> {
        let plan = &plans[w];
        let window = gather(stack, &plan.frames, scale)?;
        let mut out = model.forward(&window)?;
        if hp.shrink_at_inference {
            out = svt(&out, hp.mu)?;
        }
        Ok(plan
            .assigned
            .iter()
            .map(|&(j, slot)| {
                let l = out.row(slot)[..px]
                    .iter()
                    .map(|&v| (v.max(0.0) * scale) as f32)
                    .collect();
                (j, l)
            })
            .collect())
    })?;
    assemble(stack, results.into_iter().flatten().collect())
}

/// Same tiling as [`decompose`], each window split by robust PCA instead of the
/// network. Windows are max-scaled by the stack maximum before solving.
pub fn decompose_rpca(stack: &ImageStack, offset: usize, cfg: Option<RpcaConfig>) -> Result<DecompositionResult> {
    let plans = plan_windows(stack.len(), offset)?;
    let scale = (stack.max_value() as f64).max(f64::MIN_POSITIVE);
    let px = stack.pixels_per_frame();
    let cfg = cfg.unwrap_or_else(|| RpcaConfig::for_shape(TRIPLET, px));
    let results = par::try_map_indexed(plans.len(), |w| -> Result<Vec<(usize, Vec<f32>)>> {
        let plan = &plans[w];
        let window = gather(stack, &plan.frames, scale)?;
        let r = rpca_ialm(&window, &cfg)?;
        Ok(plan
            .assigned
            .iter()
            .map(|&(j, slot)| {
                // L = M - max(S, 0) keeps the returned sparse part equal to the
                // solver's clamped S while staying consistent with S = max(M - L, 0).
                let m = window.row(slot);
                let s = r.sparse.row(slot);
                let l = m
                    .iter()
                    .zip(s)
                    .map(|(&mv, &sv)| ((mv - sv.max(0.0)).max(0.0) * scale) as f32)
                    .collect();
                (j, l)
            })
            .collect())
    })?;
    assemble(stack, results.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slnet::conv::ConvLayer;
    use crate::slnet::model::Provenance;

    #[test]
    fn every_frame_assigned_once() {
        for (frames, offset) in [(7, 1), (11, 5), (300, 50), (101, 50), (150, 50), (160, 50), (5, 2)] {
            let plans = plan_windows(frames, offset).unwrap();
            let mut seen = vec![0; frames];
            for p in &plans {
                for &(j, slot) in &p.assigned {
                    assert_eq!(p.frames[slot], j);
                    seen[j] += 1;
                }
                assert!(p.frames.iter().all(|&f| f < frames));
            }
            assert!(seen.iter().all(|&c| c == 1), "{} {}: {:?}", frames, offset, seen);
        }
    }

    #[test]
    fn slot_zero_for_leading_frames() {
        let plans = plan_windows(300, 50).unwrap();
        assert_eq!(plans.len(), 200);
        assert_eq!(plans[0].assigned, vec![(0, 0)]);
        // Frame 250 comes from slot 2 of window 150.
        let owner = plans
            .iter()
            .find(|p| p.assigned.iter().any(|&(j, _)| j == 250))
            .unwrap();
        assert_eq!(owner.frames, [150, 200, 250]);
        assert!(plan_windows(100, 50).is_err());
    }

    fn constant_model(bias: f64) -> SLNetModel {
        let l1 = ConvLayer::new(1, 3, 1, 1, vec![0.0; 3], vec![0.0]).unwrap();
        let l2 = ConvLayer::new(3, 1, 1, 1, vec![0.0; 3], vec![bias; 3]).unwrap();
        SLNetModel::from_layers(l1, l2, Provenance::default()).unwrap()
    }

    fn ramp_stack(frames: usize) -> ImageStack {
        let data = (0..frames * 12).map(|i| (i % 17) as f32).collect();
        ImageStack::new(4, 3, data, StackMeta::default()).unwrap()
    }

    #[test]
    fn zero_model_gives_sparse_equal_to_input() {
        let stack = ramp_stack(9);
        let hp = Hyperparams {
            triplet_offset: 2,
            ..Hyperparams::default()
        };
        let r = decompose(&constant_model(0.0), &stack, &hp).unwrap();
        assert_eq!(r.sparse, stack.clone().with_meta(r.sparse.meta()));
        assert!(r.low_rank.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturating_model_gives_empty_sparse() {
        let stack = ramp_stack(9);
        let hp = Hyperparams {
            triplet_offset: 2,
            ..Hyperparams::default()
        };
        let r = decompose(&constant_model(100.0), &stack, &hp).unwrap();
        assert!(r.sparse.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_output_clamps_to_zero_background() {
        let stack = ramp_stack(9);
        let hp = Hyperparams {
            triplet_offset: 2,
            ..Hyperparams::default()
        };
        let r = decompose(&constant_model(-3.0), &stack, &hp).unwrap();
        assert!(r.low_rank.data().iter().all(|&v| v == 0.0));
        for (s, m) in r.sparse.data().iter().zip(stack.data()) {
            assert_eq!(s, m);
        }
    }
}
