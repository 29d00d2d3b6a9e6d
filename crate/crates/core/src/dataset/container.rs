//! Little-endian trajectory container.
//!
//! Layout: magic `STAPDE01`, then `version u32`, `dim u8`, `dims u32 x 3`
//! (unused axes are 1), `dx f64`, `stride u32`, `frames u32`,
//! `components u8`, followed by `frames x components x grid` f32 values in
//! C order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fdtd::{FieldFrame, GridSpec, Trajectory};

pub const MAGIC: &[u8; 8] = b"STAPDE01";
pub const VERSION: u32 = 1;

pub fn write_trajectory<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    let grid = &traj.grid;
    let frame0 = traj
        .frames
        .first()
        .ok_or_else(|| Error::usage("cannot write an empty trajectory"))?;
    if traj.frames.iter().any(|f| f.dims() != grid.dims.as_slice()) {
        return Err(Error::usage("trajectory frames do not match its grid"));
    }
    let mut dims = [1u32; 3];
    for (d, &n) in dims.iter_mut().zip(&grid.dims) {
        *d = u32::try_from(n).map_err(|_| Error::usage("grid axis too large"))?;
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[grid.dim() as u8])?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&grid.dx.to_le_bytes())?;
    w.write_all(&(traj.stride as u32).to_le_bytes())?;
    w.write_all(&(traj.frames.len() as u32).to_le_bytes())?;
    w.write_all(&[frame0.components() as u8])?;
    let mut buf = Vec::with_capacity(frame0.data().len() * 4);
    for f in &traj.frames {
        buf.clear();
        for &v in f.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated trajectory header"),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

pub fn read_trajectory<R: Read>(mut r: R) -> Result<Trajectory> {
    if &take::<8>(&mut r)? != MAGIC {
        return Err(Error::format("bad magic, not a trajectory container"));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::format(format!("unsupported container version {version}")));
    }
    let dim = take::<1>(&mut r)?[0] as usize;
    if !(2..=3).contains(&dim) {
        return Err(Error::format(format!("invalid spatial dimension {dim}")));
    }
    let mut dims = Vec::with_capacity(3);
    for _ in 0..3 {
        dims.push(u32::from_le_bytes(take(&mut r)?) as usize);
    }
    if dims[dim..].iter().any(|&d| d != 1) {
        return Err(Error::format("unused axes must have extent 1"));
    }
    dims.truncate(dim);
    let dx = f64::from_le_bytes(take(&mut r)?);
    let stride = u32::from_le_bytes(take(&mut r)?) as usize;
    let frames = u32::from_le_bytes(take(&mut r)?) as usize;
    let components = take::<1>(&mut r)?[0] as usize;
    let expected_components = if dim == 2 { 3 } else { 6 };
    if components != expected_components {
        return Err(Error::format(format!(
            "{components} components for a {dim}D grid, expected {expected_components}"
        )));
    }
    let per_frame = components * dims.iter().product::<usize>();
    let mut raw = vec![0u8; per_frame * 4];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        r.read_exact(&mut raw).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(format!("truncated data in frame {f}")),
            _ => Error::Io(e),
        })?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        out.push(FieldFrame::from_data(&dims, data)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("trailing bytes after trajectory data"));
    }
    Ok(Trajectory {
        grid: GridSpec::new(&dims, dx),
        stride,
        frames: out,
    })
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_trajectory(traj, BufWriter::new(File::create(path)?))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dims: &[usize], frames: usize) -> Trajectory {
        let frames = (0..frames)
            .map(|f| {
                let mut fr = FieldFrame::zeros(dims);
                for (i, v) in fr.data_mut().iter_mut().enumerate() {
                    *v = ((i * 7 + f * 13) % 17) as f64 * 0.25 - 2.0;
                }
                fr
            })
            .collect();
        Trajectory {
            grid: GridSpec::new(dims, 5e-7),
            stride: 25,
            frames,
        }
    }

    #[test]
    fn round_trip_2d_and_3d() {
        for dims in [vec![8usize, 9], vec![8, 9, 10]] {
            let t = sample(&dims, 3);
            let mut bytes = Vec::new();
            write_trajectory(&t, &mut bytes).unwrap();
            let header = 8 + 4 + 1 + 12 + 8 + 4 + 4 + 1;
            assert_eq!(bytes.len(), header + 3 * t.frames[0].data().len() * 4);
            let back = read_trajectory(bytes.as_slice()).unwrap();
            // values are exact multiples of 1/4, so f32 storage is lossless
            assert_eq!(back, t);
        }
    }

    #[test]
    fn header_layout() {
        let t = sample(&[8, 9], 3);
        let mut b = Vec::new();
        write_trajectory(&t, &mut b).unwrap();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(b[12], 2);
        assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[17..21].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(b[21..25].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[25..33].try_into().unwrap()), 5e-7);
        assert_eq!(u32::from_le_bytes(b[33..37].try_into().unwrap()), 25);
        assert_eq!(u32::from_le_bytes(b[37..41].try_into().unwrap()), 3);
        assert_eq!(b[41], 3);
        let first = f32::from_le_bytes(b[42..46].try_into().unwrap());
        assert_eq!(first as f64, t.frames[0].data()[0]);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = sample(&[8, 8], 3);
        let mut b = Vec::new();
        write_trajectory(&t, &mut b).unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_trajectory(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_trajectory(&b[..b.len() - 1]), Err(Error::Format(_))));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(read_trajectory(long.as_slice()), Err(Error::Format(_))));
        let mut comps = b;
        comps[41] = 6;
        assert!(read_trajectory(comps.as_slice()).is_err());
    }
}
