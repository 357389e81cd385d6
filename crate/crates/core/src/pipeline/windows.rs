//! Fixed-window splitting and crossfade stitching of generated clips.

use crate::dataio::window_starts;
use crate::error::{Error, Result};
use crate::nn::NumArray;

/// Splits a `[n, C]` sequence into `window`-frame clips; see [`window_starts`].
pub fn split_windows(seq: &NumArray, window: usize, stride: usize) -> Result<(Vec<NumArray>, Vec<usize>)> {
    let starts = window_starts(seq.rows(), window, stride)?;
    let clips = starts.iter().map(|&s| seq.slice_rows(s, s + window)).collect();
    Ok((clips, starts))
}

fn check_cover(lens: &[usize], starts: &[usize], total_len: usize) -> Result<()> {
    if lens.len() != starts.len() || lens.is_empty() {
        return Err(Error::Config(format!(
            "{} clips for {} start positions",
            lens.len(),
            starts.len()
        )));
    }
    if starts[0] > 0 {
        return Err(Error::StitchGap { start: 0, end: starts[0] });
    }
    let mut end = 0;
    for (i, (&s, &n)) in starts.iter().zip(lens).enumerate() {
        if i > 0 && (s < starts[i - 1] || s + n < end) {
            return Err(Error::Config(format!(
                "clip {i} at {s}..{} does not advance past frame {end}",
                s + n
            )));
        }
        if s > end {
            return Err(Error::StitchGap { start: end, end: s });
        }
        end = s + n;
    }
    if end < total_len {
        return Err(Error::StitchGap { start: end, end: total_len });
    }
    if end > total_len {
        return Err(Error::Config(format!("clips extend to frame {end} past length {total_len}")));
    }
    Ok(())
}

/// Per-frame `(clip, weight)` lists of the crossfade.
///
/// Clips are merged left to right. Where clip `c` overlaps the frames already
/// covered (an overlap of `m` frames), overlap frame `j` takes weight
/// `(j+1)/(m+1)` from `c` and the rest from what was there, scaled down
/// proportionally. Weights at every frame sum to 1.
pub fn blend_weights(lens: &[usize], starts: &[usize], total_len: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    check_cover(lens, starts, total_len)?;
    let mut w: Vec<Vec<(usize, f64)>> = vec![Vec::new(); total_len];
    let mut covered = 0usize;
    for (c, (&s, &n)) in starts.iter().zip(lens).enumerate() {
        let m = covered.saturating_sub(s);
        for (j, frame) in w[s..s + n].iter_mut().enumerate() {
            if j < m {
                let a = (j + 1) as f64 / (m + 1) as f64;
                frame.iter_mut().for_each(|(_, x)| *x *= 1.0 - a);
                frame.push((c, a));
            } else {
                frame.push((c, 1.0));
            }
        }
        covered = s + n;
    }
    Ok(w)
}

/// Merges clips into one `[total_len, C]` sequence with [`blend_weights`].
pub fn stitch_windows(clips: &[NumArray], starts: &[usize], total_len: usize) -> Result<NumArray> {
    let lens: Vec<usize> = clips.iter().map(|c| c.rows()).collect();
    let weights = blend_weights(&lens, starts, total_len)?;
    let cols = clips[0].cols();
    if let Some(bad) = clips.iter().find(|c| c.cols() != cols) {
        return Err(Error::dims("stitch_windows", clips[0].shape(), bad.shape()));
    }
    let mut out = NumArray::zeros(&[total_len, cols]);
    for (f, ws) in weights.iter().enumerate() {
        let row = out.row_mut(f);
        for &(c, a) in ws {
            for (o, v) in row.iter_mut().zip(clips[c].row(f - starts[c])) {
                *o += a * v;
            }
        }
    }
    Ok(out)
}

/// Hard cuts without blending: frame `f` comes from the latest clip starting at or before `f`.
pub fn concat_windows(clips: &[NumArray], starts: &[usize], total_len: usize) -> Result<NumArray> {
    let lens: Vec<usize> = clips.iter().map(|c| c.rows()).collect();
    check_cover(&lens, starts, total_len)?;
    let mut out = NumArray::zeros(&[total_len, clips[0].cols()]);
    for f in 0..total_len {
        let c = starts.iter().rposition(|&s| s <= f).unwrap();
        out.row_mut(f).copy_from_slice(clips[c].row(f - starts[c]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(n: usize, v: f64) -> NumArray {
        NumArray::full(&[n, 1], v)
    }

    #[test]
    fn ramp_between_constant_clips() {
        let out = stitch_windows(&[constant(40, 0.0), constant(40, 1.0)], &[0, 20], 60).unwrap();
        for j in 0..20 {
            assert!((out.get(20 + j, 0) - (j + 1) as f64 / 21.0).abs() < 1e-15);
        }
        assert_eq!(out.get(19, 0), 0.0);
        assert_eq!(out.get(40, 0), 1.0);
    }

    #[test]
    fn gaps_are_named() {
        let clips = [constant(10, 0.0), constant(10, 0.0)];
        match stitch_windows(&clips, &[0, 15], 25) {
            Err(Error::StitchGap { start: 10, end: 15 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(stitch_windows(&clips, &[0, 10], 30), Err(Error::StitchGap { start: 20, end: 30 })));
        assert!(matches!(stitch_windows(&clips, &[3, 10], 20), Err(Error::StitchGap { start: 0, end: 3 })));
    }

    #[test]
    fn triple_cover_from_tail_window() {
        let (lens, starts) = (vec![40; 4], vec![0, 20, 40, 50]);
        let w = blend_weights(&lens, &starts, 90).unwrap();
        assert_eq!(w[55].len(), 3);
        for ws in &w {
            assert!((ws.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_takes_latest_clip() {
        let out = concat_windows(&[constant(40, 0.0), constant(40, 1.0)], &[0, 20], 60).unwrap();
        assert_eq!(out.get(19, 0), 0.0);
        assert_eq!(out.get(20, 0), 1.0);
    }
}
