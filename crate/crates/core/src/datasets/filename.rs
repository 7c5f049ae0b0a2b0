use crate::error::{Error, Result};

/// Parses Market-1501 / DukeMTMC-style names such as
/// `0002_c1s1_000451_03.jpg` or `-1_c3s2_000001_00.jpg` into
/// `(identity, camera)`.
pub fn parse_reid_filename(name: &str) -> Result<(i64, u32)> {
    let bad = || Error::Filename(name.to_string());
    let (id_token, rest) = name.split_once('_').ok_or_else(bad)?;
    let digits = id_token.strip_prefix('-').unwrap_or(id_token);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let identity: i64 = id_token.parse().map_err(|_| bad())?;
    if identity < -1 {
        return Err(bad());
    }
    let cam_part = rest.strip_prefix('c').ok_or_else(bad)?;
    let cam_len = cam_part.bytes().take_while(|b| b.is_ascii_digit()).count();
    if cam_len == 0 {
        return Err(bad());
    }
    let camera: u32 = cam_part[..cam_len].parse().map_err(|_| bad())?;
    if camera == 0 {
        return Err(bad());
    }
    Ok((identity, camera))
}
