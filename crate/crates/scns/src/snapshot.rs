//! Binary state snapshots.
//!
//! Layout: magic `SNS1`, u8 version, u8 dim, u8 component count, u32
//! little-endian points per axis, f64 little-endian time, then per
//! component the `M^N` collocation values as little-endian f64 in
//! row-major node order, then a CRC-32 of the payload.  Collocation
//! values rather than coefficients: positivity of `r` is auditable by
//! looking at the file.

use crate::spectral::{SpectralField, TorusGrid};
use crate::{Error, Result};
use std::path::Path;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"SNS1";
pub const SNAPSHOT_VERSION: u8 = 1;

const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 + 8;

const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut n = 0;
    while n < 256 {
        let mut c = n as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 {
                0xEDB8_8320 ^ (c >> 1)
            } else {
                c >> 1
            };
            k += 1;
        }
        table[n] = c;
        n += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc_table();

/// CRC-32 (IEEE 802.3, reflected).
pub fn crc32(data: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for &b in data {
        c = CRC_TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

fn fmt_err(message: impl Into<String>) -> Error {
    Error::SnapshotFormat(message.into())
}

/// Serialize `(t, r, u)` to `path`.
pub fn write_snapshot(path: &Path, t: f64, r: &SpectralField, u: &SpectralField) -> Result<()> {
    let grid = r.grid();
    if u.grid() != grid {
        return Err(Error::GridMismatch("snapshot fields disagree".into()));
    }
    if r.ncomp() != 1 || u.ncomp() != grid.dim() {
        return Err(Error::InvalidField(format!(
            "snapshot wants scalar r and {}-component u, got {} and {}",
            grid.dim(),
            r.ncomp(),
            u.ncomp()
        )));
    }
    let ncomp = 1 + grid.dim();
    let len = grid.len();
    let mut payload = Vec::with_capacity(ncomp * len * 8);
    for v in r.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for c in 0..grid.dim() {
        for v in u.comp_values(c) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    bytes.extend_from_slice(&SNAPSHOT_MAGIC);
    bytes.push(SNAPSHOT_VERSION);
    bytes.push(grid.dim() as u8);
    bytes.push(ncomp as u8);
    bytes.extend_from_slice(&(grid.m() as u32).to_le_bytes());
    bytes.extend_from_slice(&t.to_le_bytes());
    let crc = crc32(&payload);
    bytes.extend_from_slice(&payload);
    bytes.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Deserialize a snapshot, building the grid the file declares.
pub fn read_snapshot_raw(path: &Path) -> Result<(f64, TorusGrid, SpectralField, SpectralField)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < HEADER_LEN + 4 {
        return Err(fmt_err(format!(
            "file too short for a snapshot header: {} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != SNAPSHOT_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    if bytes[4] != SNAPSHOT_VERSION {
        return Err(fmt_err(format!(
            "unsupported version {} (expected {SNAPSHOT_VERSION})",
            bytes[4]
        )));
    }
    let dim = bytes[5] as usize;
    let ncomp = bytes[6] as usize;
    let m = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let t = f64::from_le_bytes(bytes[11..19].try_into().unwrap());
    if ncomp != 1 + dim {
        return Err(fmt_err(format!(
            "component count {ncomp} does not match dim {dim}"
        )));
    }
    // The trailing word is always read as the checksum, so a truncated
    // payload fails the integrity check rather than producing a partial
    // state.
    let payload = &bytes[HEADER_LEN..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let grid = TorusGrid::new(dim, m).map_err(|e| fmt_err(format!("bad grid header: {e}")))?;
    let len = grid.len();
    if payload.len() != ncomp * len * 8 {
        return Err(fmt_err(format!(
            "payload length {} does not match {ncomp} x {len} values",
            payload.len()
        )));
    }
    let mut comps = vec![0.0f64; ncomp * len];
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        comps[i] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    if !t.is_finite() {
        return Err(fmt_err("non-finite time"));
    }
    let r = SpectralField::from_values(&grid, 1, comps[..len].to_vec())
        .map_err(|e| fmt_err(format!("density payload: {e}")))?;
    let u = SpectralField::from_values(&grid, dim, comps[len..].to_vec())
        .map_err(|e| fmt_err(format!("velocity payload: {e}")))?;
    for (name, field) in [("r", &r), ("u", &u)] {
        audit_reconstruction(name, field)?;
    }
    Ok((t, grid, r, u))
}

/// Deserialize and insist the file lives on `expected`.
pub fn read_snapshot(
    path: &Path,
    expected: &TorusGrid,
) -> Result<(f64, SpectralField, SpectralField)> {
    let (t, grid, r, u) = read_snapshot_raw(path)?;
    if &grid != expected {
        return Err(Error::GridMismatch(format!(
            "snapshot on {grid:?}, run configured for {expected:?}"
        )));
    }
    Ok((t, r, u))
}

/// Synthesis audit: the Hermitian coefficient set rebuilt from the stored
/// values must reproduce them.
fn audit_reconstruction(name: &str, field: &SpectralField) -> Result<()> {
    let recon = SpectralField::from_coeffs_unchecked(
        field.grid(),
        field.ncomp(),
        field.coeffs().to_vec(),
    );
    let mut sup = 0.0f64;
    let mut scale = 1.0f64;
    for (a, b) in field.values().iter().zip(recon.values()) {
        sup = sup.max((a - b).abs());
        scale = scale.max(a.abs());
    }
    if sup > 1e-10 * scale {
        return Err(fmt_err(format!(
            "{name}: reconstruction deviates by {sup:e}"
        )));
    }
    Ok(())
}
