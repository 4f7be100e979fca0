use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{align_history_bev, rigid_from_rows, rigid_to_rows, BevGrid, EgoPose};
use crate::numerics::checkpoint::{read_tensors, write_tensors};
use crate::numerics::tensor::{FeatureMap2D, Tensor};

/// Ring buffer of past BEV maps with the ego pose each was produced at,
/// oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct BevHistory {
    capacity: usize,
    entries: VecDeque<(FeatureMap2D, EgoPose)>,
}

impl BevHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Timestamp of the newest entry.
    pub fn current_timestamp(&self) -> Option<i64> {
        self.entries.back().map(|(_, p)| p.timestamp)
    }

    /// Oldest first.
    pub fn iter(
        &self,
    ) -> impl DoubleEndedIterator<Item = &(FeatureMap2D, EgoPose)> + ExactSizeIterator {
        self.entries.iter()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.entries.iter().map(|(_, p)| p.timestamp).collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends a map; the oldest entries are evicted beyond capacity.
    pub fn push(&mut self, bev: FeatureMap2D, pose: EgoPose) -> Result<()> {
        if let Some(last) = self.current_timestamp() {
            if pose.timestamp <= last {
                return Err(Error::Input(format!(
                    "history timestamp {} does not follow {last}",
                    pose.timestamp
                )));
            }
        }
        if let Some((first, _)) = self.entries.front() {
            if (first.channels, first.height, first.width) != (bev.channels, bev.height, bev.width)
            {
                return Err(Error::Dimension(format!(
                    "history holds {}x{}x{} maps, got {}x{}x{}",
                    first.channels, first.height, first.width, bev.channels, bev.height, bev.width
                )));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        while self.entries.len() >= self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((bev, pose));
        Ok(())
    }

    /// Up to `limit` most recent maps warped into the `now` ego frame,
    /// newest first.
    pub fn aligned(
        &self,
        now: &EgoPose,
        grid: &BevGrid,
        limit: usize,
    ) -> Result<Vec<FeatureMap2D>> {
        self.entries
            .iter()
            .rev()
            .take(limit)
            .map(|(m, then)| align_history_bev(m, then, now, grid))
            .collect()
    }

    /// Records `capacity`, then `map.{i}` / `pose.{i}` pairs, where a pose is
    /// `[timestamp, 12 rigid rows]`.
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut records = vec![(
            "capacity".to_string(),
            Tensor::new(&[1], vec![self.capacity as f64])?,
        )];
        for (i, (m, p)) in self.entries.iter().enumerate() {
            records.push((
                format!("map.{i}"),
                Tensor::new(&[m.channels, m.height, m.width], m.data.clone())?,
            ));
            let mut pose = vec![p.timestamp as f64];
            pose.extend_from_slice(&rigid_to_rows(&p.world_from_ego));
            records.push((format!("pose.{i}"), Tensor::new(&[13], pose)?));
        }
        write_tensors(w, &records)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let records = read_tensors(r)?;
        let bad = |msg: &str| Error::Format(format!("history file: {msg}"));
        let mut it = records.into_iter();
        let (name, cap) = it.next().ok_or_else(|| bad("empty"))?;
        if name != "capacity" || cap.len() != 1 {
            return Err(bad("missing capacity record"));
        }
        let mut hist = Self::new(cap.data[0] as usize);
        let rest: Vec<_> = it.collect();
        if rest.len() % 2 != 0 {
            return Err(bad("unpaired map record"));
        }
        for (i, pair) in rest.chunks_exact(2).enumerate() {
            let (mn, m) = &pair[0];
            let (pn, p) = &pair[1];
            if *mn != format!("map.{i}")
                || *pn != format!("pose.{i}")
                || m.shape().len() != 3
                || p.len() != 13
            {
                return Err(bad(&format!("malformed entry {i}")));
            }
            let s = m.shape();
            let map = FeatureMap2D::new(s[0], s[1], s[2], m.data.clone())?;
            let ts = p.data[0];
            if ts.fract() != 0.0 || ts.abs() > 9.0e15 {
                return Err(bad(&format!("timestamp {ts} is not an integer")));
            }
            let pose = EgoPose::new(ts as i64, rigid_from_rows(&p.data[1..])?);
            hist.push(map, pose)?;
        }
        Ok(hist)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Functional form of [`BevHistory::push`].
pub fn push_history(mut buf: BevHistory, bev: FeatureMap2D, pose: EgoPose) -> Result<BevHistory> {
    buf.push(bev, pose)?;
    Ok(buf)
}
