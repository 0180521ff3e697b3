//! Offline dumps of simulated episodes.
//!
//! `frames.bin` layout, all integers and floats little-endian:
//!
//! ```text
//! magic   b"RAIF"
//! version u32 (= 1)
//! frames  u32
//! ranges  u32
//! angles  u32
//! range_axis  ranges x f64
//! angle_axis  angles x f64
//! per frame: timestamp u32, then ranges*angles f64 row-major [range][angle]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::scene::{rai_stats, Episode, RaiFrame};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RAIF";
const VERSION: u32 = 1;

pub fn write_frame_dump<W: Write>(mut w: W, frames: &[&RaiFrame]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot dump an empty frame list".into()))?;
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        frames.len() as u32,
        first.n_ranges() as u32,
        first.n_angles() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in first.range_axis.iter().chain(&first.angle_axis) {
        w.write_all(&v.to_le_bytes())?;
    }
    for f in frames {
        if f.intensity.dim() != first.intensity.dim() {
            return Err(Error::ShapeMismatch(
                "frames in one dump must share a grid".into(),
            ));
        }
        w.write_all(&(f.timestamp as u32).to_le_bytes())?;
        for v in f.intensity.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_frame_dump<R: Read>(mut r: R) -> Result<Vec<RaiFrame>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a frame dump".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported frame dump version {version}"
        )));
    }
    let n = read_u32(&mut r)? as usize;
    let nr = read_u32(&mut r)? as usize;
    let na = read_u32(&mut r)? as usize;
    let range_axis = (0..nr)
        .map(|_| read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let angle_axis = (0..na)
        .map(|_| read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let timestamp = read_u32(&mut r)? as usize;
        let data = (0..nr * na)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let intensity = Array2::from_shape_vec((nr, na), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        frames.push(RaiFrame {
            intensity,
            range_axis: range_axis.clone(),
            angle_axis: angle_axis.clone(),
            timestamp,
        });
    }
    Ok(frames)
}

/// Writes `frames.bin`, `truth.csv` and `stats.csv` for one episode into
/// `dir`.
pub fn write_episode_dump(dir: &Path, episode: &Episode) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let frames: Vec<&RaiFrame> = episode.frames.iter().map(|(f, _)| f).collect();
    let file = std::fs::File::create(dir.join("frames.bin"))?;
    write_frame_dump(std::io::BufWriter::new(file), &frames)?;

    let mut truth = String::from("frame,target,x,y\n");
    let mut stats = String::from("frame,n_targets,mu_rai,sigma_rai\n");
    for (frame, gt) in &episode.frames {
        for (k, p) in gt.positions.iter().enumerate() {
            truth.push_str(&format!("{},{},{},{}\n", frame.timestamp, k, p[0], p[1]));
        }
        let (mu, sigma) = rai_stats(frame);
        stats.push_str(&format!(
            "{},{},{},{}\n",
            frame.timestamp,
            gt.count(),
            mu,
            sigma
        ));
    }
    std::fs::write(dir.join("truth.csv"), truth)?;
    std::fs::write(dir.join("stats.csv"), stats)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_suite;

    #[test]
    fn frame_dump_round_trips() {
        let suite = default_suite();
        let task = suite.spawn_episode(&suite.rooms[0], 2).unwrap();
        let ep = Episode::generate(&task, 3, &suite.radar, &suite.scene).unwrap();
        let frames: Vec<&RaiFrame> = ep.frames.iter().map(|(f, _)| f).collect();
        let mut buf = Vec::new();
        write_frame_dump(&mut buf, &frames).unwrap();
        let back = read_frame_dump(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(frames) {
            assert_eq!(a, b);
        }
        assert!(read_frame_dump(&b"XXXX"[..]).is_err());
    }
}
