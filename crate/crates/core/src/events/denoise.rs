use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::par;
use crate::raster::Raster;

/// Half-extents of the spatiotemporal support box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SupportRadius {
    pub dt: usize,
    pub dx: usize,
    pub dy: usize,
}

impl Default for SupportRadius {
    fn default() -> Self {
        Self { dt: 1, dx: 1, dy: 1 }
    }
}

/// Removes active (nonzero) pixels that lack spatiotemporal support.
///
/// The result is the largest subset of the active pixels in which every
/// member has at least `min_support` other members inside its
/// `(2dt+1)×(2dy+1)×(2dx+1)` box. Members keep their value, everything else
/// becomes zero. Support is judged among survivors, so removing a pixel can
/// strip a neighbour of its support too; this is what makes the filter
/// idempotent.
pub fn denoise_spatiotemporal(frames: &[Raster], radius: SupportRadius, min_support: usize) -> Result<Vec<Raster>> {
    if min_support == 0 {
        return Err(Error::InvalidArgument("min_support must be at least 1".into()));
    }
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    for f in frames {
        first.ensure_same_dims(f)?;
    }
    let (w, h) = first.dims();
    let n = frames.len();
    let plane = w * h;
    let active: Vec<bool> = frames
        .iter()
        .flat_map(|f| f.data().iter().map(|&v| v != 0.0))
        .collect();

    let neighbours = |idx: usize, f: &mut dyn FnMut(usize)| {
        let t = idx / plane;
        let y = (idx % plane) / w;
        let x = idx % w;
        for tt in t.saturating_sub(radius.dt)..=(t + radius.dt).min(n - 1) {
            for yy in y.saturating_sub(radius.dy)..=(y + radius.dy).min(h - 1) {
                for xx in x.saturating_sub(radius.dx)..=(x + radius.dx).min(w - 1) {
                    let j = tt * plane + yy * w + xx;
                    if j != idx {
                        f(j);
                    }
                }
            }
        }
    };

    let mut support: Vec<usize> = par::map_range(n * plane, |i| {
        if !active[i] {
            return 0;
        }
        let mut c = 0;
        neighbours(i, &mut |j| c += usize::from(active[j]));
        c
    });

    let mut alive = active.clone();
    let mut queue: VecDeque<usize> = (0..n * plane)
        .filter(|&i| alive[i] && support[i] < min_support)
        .collect();
    let mut queued = vec![false; n * plane];
    for &i in &queue {
        queued[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        alive[i] = false;
        neighbours(i, &mut |j| {
            if alive[j] {
                support[j] -= 1;
                if support[j] < min_support && !queued[j] {
                    queued[j] = true;
                    queue.push_back(j);
                }
            }
        });
    }

    Ok(frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let mut out = f.clone();
            for (k, v) in out.data_mut().iter_mut().enumerate() {
                if !alive[t * plane + k] {
                    *v = 0.0;
                }
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(n: usize, w: usize, h: usize, lit: &[(usize, usize, usize)]) -> Vec<Raster> {
        let mut s = vec![Raster::zeros(w, h); n];
        for &(t, x, y) in lit {
            s[t].set(x, y, 1.0);
        }
        s
    }

    fn lit(s: &[Raster]) -> usize {
        s.iter().map(|f| f.data().iter().filter(|&&v| v != 0.0).count()).sum()
    }

    #[test]
    fn isolated_pixel_removed() {
        let s = stack(3, 8, 8, &[(1, 4, 4)]);
        let out = denoise_spatiotemporal(&s, SupportRadius::default(), 2).unwrap();
        assert_eq!(lit(&out), 0);
    }

    #[test]
    fn two_by_two_cluster_survives() {
        let s = stack(3, 8, 8, &[(1, 3, 3), (1, 4, 3), (1, 3, 4), (1, 4, 4)]);
        let out = denoise_spatiotemporal(&s, SupportRadius::default(), 2).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn temporal_streak_collapses() {
        // the middle pixel starts with two supporters, both of which have one
        let s = stack(3, 8, 8, &[(0, 2, 2), (1, 2, 2), (2, 2, 2)]);
        let out = denoise_spatiotemporal(&s, SupportRadius::default(), 2).unwrap();
        assert_eq!(lit(&out), 0);
        let out = denoise_spatiotemporal(&s, SupportRadius::default(), 1).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn keeps_values_and_rejects_bad_input() {
        let mut s = stack(1, 4, 4, &[(0, 0, 0), (0, 1, 0), (0, 0, 1)]);
        s[0].set(1, 0, 0.25);
        let out = denoise_spatiotemporal(&s, SupportRadius::default(), 2).unwrap();
        assert_eq!(out[0].get(1, 0), 0.25);
        assert!(denoise_spatiotemporal(&s, SupportRadius::default(), 0).is_err());
        let mixed = vec![Raster::zeros(4, 4), Raster::zeros(5, 4)];
        assert!(denoise_spatiotemporal(&mixed, SupportRadius::default(), 1).is_err());
    }
}
