use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{lseq, Attitude, DialoguePair};
use crate::error::{Error, Result};
use crate::nn::NumArray;

/// Window start frames: `0, stride, 2·stride, …` plus a right-aligned final
/// window at `len − window` when the stride grid leaves a tail uncovered.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::Config(format!(
            "need 0 < stride <= window, got window {window} stride {stride}"
        )));
    }
    if len < window {
        return Err(Error::Data(format!("sequence of {len} frames is shorter than window {window}")));
    }
    let last = len - window;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    Ok(starts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowRef {
    pub pair: usize,
    pub start: usize,
}

/// One training example: aligned speaker and listener windows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingWindow {
    pub at: WindowRef,
    pub speaker: NumArray,
    pub audio: NumArray,
    pub listener: NumArray,
    pub identity: NumArray,
    pub attitude: Attitude,
}

/// All pairs of a dataset directory, in file-name order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub pairs: Vec<DialoguePair>,
    pub paths: Vec<PathBuf>,
}

impl Dataset {
    /// Loads every `pairs/*.lseq` file under `dir`.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let pairs_dir = dir.join("pairs");
        let entries = std::fs::read_dir(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "lseq"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Data(format!("no .lseq pairs in {}", pairs_dir.display())));
        }
        let pairs = paths.iter().map(|p| lseq::read_sequence(p)).collect::<Result<_>>()?;
        Ok(Dataset { pairs, paths })
    }

    pub fn from_pairs(pairs: Vec<DialoguePair>) -> Result<Dataset> {
        if pairs.is_empty() {
            return Err(Error::Data("dataset has no pairs".into()));
        }
        Ok(Dataset {
            paths: Vec::new(),
            pairs,
        })
    }

    pub fn windows(&self, window: usize, stride: usize) -> Result<Vec<WindowRef>> {
        let mut out = Vec::new();
        for (i, p) in self.pairs.iter().enumerate() {
            for start in window_starts(p.len(), window, stride)? {
                out.push(WindowRef { pair: i, start });
            }
        }
        Ok(out)
    }

    pub fn window(&self, at: WindowRef, window: usize) -> TrainingWindow {
        let p = &self.pairs[at.pair];
        let end = at.start + window;
        TrainingWindow {
            at,
            speaker: p.speaker.slice_rows(at.start, end),
            audio: p.audio.slice_rows(at.start, end),
            listener: p.listener.slice_rows(at.start, end),
            identity: p.identity.clone(),
            attitude: p.attitude,
        }
    }

    /// One shuffled epoch of batches; the last batch may be short.
    pub fn batches<'a>(
        &'a self,
        window: usize,
        stride: usize,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<BatchIter<'a>> {
        if batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        let mut refs = self.windows(window, stride)?;
        refs.shuffle(rng);
        Ok(BatchIter {
            data: self,
            refs,
            window,
            batch,
            pos: 0,
        })
    }
}

pub struct BatchIter<'a> {
    data: &'a Dataset,
    refs: Vec<WindowRef>,
    window: usize,
    batch: usize,
    pos: usize,
}

impl BatchIter<'_> {
    pub fn num_windows(&self) -> usize {
        self.refs.len()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Vec<TrainingWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.refs.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.refs.len());
        let out = self.refs[self.pos..end]
            .iter()
            .map(|&r| self.data.window(r, self.window))
            .collect();
        self.pos = end;
        Some(out)
    }
}
