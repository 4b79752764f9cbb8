//! Sliding-window video inference: every frame is sketched, and once `N`
//! sketches are available the temporal network refines the newest one.

use std::path::Path;

use uta_core::Raster;
use uta_nn::params::Bindings;
use uta_nn::sis::sis_forward;
use uta_nn::tcc::tcc_forward;
use uta_nn::{no_grad, Tensor, Var};

use crate::config::size_multiple;
use crate::dataset::Scene;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scene::{frame_file_name, SceneDir};

/// Replicates the last row and column until both dimensions are multiples
/// of `m`.
pub fn pad_to_multiple(r: &Raster, m: usize) -> Raster {
    let (w, h) = r.dims();
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    if (pw, ph) == (w, h) {
        return r.clone();
    }
    Raster::from_fn(pw, ph, |x, y| r.get(x.min(w - 1), y.min(h - 1)))
}

fn image_tensor(r: &Raster) -> Tensor {
    Tensor::new(&[1, 1, r.height(), r.width()], r.data().to_vec()).expect("raster shape")
}

fn tensor_image(t: &Tensor, width: usize, height: usize) -> Raster {
    Raster::from_vec(width, height, t.data().to_vec()).expect("single image")
}

fn sketch(p: &Bindings, model: &Model, thermal: &Raster, events: &Raster) -> Result<Tensor> {
    let y = sis_forward(
        p,
        &Var::constant(image_tensor(events)),
        &Var::constant(image_tensor(thermal)),
        &model.sis,
    )?;
    Ok(y.value().clone())
}

/// Output for every input frame: the sketch while fewer than `N` frames have
/// been seen, the refined frame afterwards. `thermal` and `events` are in
/// thermal pixels.
pub fn infer_frames(model: &Model, thermal: &[Raster], events: &[Raster]) -> Result<Vec<Raster>> {
    if thermal.len() != events.len() {
        return Err(Error::Dataset(format!(
            "{} thermal frames but {} event frames",
            thermal.len(),
            events.len()
        )));
    }
    let Some(first) = thermal.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = first.dims();
    let m = size_multiple(&model.sis, &model.tcc);
    let n = model.tcc.frames;
    let p = model.params.bind();
    no_grad(|| {
        let mut sketches: Vec<Tensor> = Vec::with_capacity(thermal.len());
        let mut out = Vec::with_capacity(thermal.len());
        for (k, (t, e)) in thermal.iter().zip(events).enumerate() {
            if t.dims() != (w, h) || e.dims() != (w, h) {
                return Err(Error::Dataset(format!("frame {k} differs in size from frame 0")));
            }
            let (tp, ep) = (pad_to_multiple(t, m), pad_to_multiple(e, m));
            let (pw, ph) = tp.dims();
            sketches.push(sketch(&p, model, &tp, &ep)?);
            let frame = if k + 1 >= n {
                let data: Vec<f64> = sketches[k + 1 - n..=k].iter().flat_map(|s| s.data().iter().copied()).collect();
                let volume = Var::constant(Tensor::new(&[1, n, ph, pw], data)?);
                tcc_forward(&p, &volume, &model.tcc)?.value().clone()
            } else {
                sketches[k].clone()
            };
            out.push(tensor_image(&frame, pw, ph).crop(0, 0, w, h));
        }
        Ok(out)
    })
}

/// Runs [`infer_frames`] over a scene directory and writes one PNG per
/// thermal frame into `out_dir`. Returns the number of frames written.
pub fn infer_scene(model: &Model, scene_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<usize> {
    let scene = Scene::open(SceneDir::new(scene_dir.as_ref()))?;
    let present = scene.dir.thermal_indices()?;
    if let Some(k) = (0..scene.frame_count).find(|k| !present.contains(k)) {
        return Err(Error::Dataset(format!("{}: missing thermal frame {k}", scene.dir.name())));
    }
    let (thermal, events): (Vec<Raster>, Vec<Raster>) = (0..scene.frame_count)
        .map(|k| scene.frame_pair(k))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let frames = infer_frames(model, &thermal, &events)?;
    std::fs::create_dir_all(out_dir.as_ref())?;
    for (k, f) in frames.iter().enumerate() {
        f.save_png(out_dir.as_ref().join(frame_file_name(k)))?;
    }
    Ok(frames.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_replicates_edges_and_keeps_content() {
        let r = Raster::from_fn(5, 3, |x, y| (x + 10 * y) as f64);
        let p = pad_to_multiple(&r, 4);
        assert_eq!(p.dims(), (8, 4));
        assert_eq!(p.crop(0, 0, 5, 3), r);
        assert_eq!(p.get(7, 3), r.get(4, 2));
        assert_eq!(pad_to_multiple(&p, 4), p);
    }
}
