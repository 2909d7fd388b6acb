//! KFEA sidecar: `"KFEA"`, u32 N, u32 d, then N·d little-endian f32, row-major.

use std::fs;
use std::path::Path;

use super::FeatureError;

const MAGIC: &[u8; 4] = b"KFEA";

pub fn encode_kfea(n: usize, dim: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), n * dim, "feature buffer does not match N × d");
    let mut out = Vec::with_capacity(12 + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_kfea(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), FeatureError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(FeatureError::Format("missing KFEA header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != n * dim * 4 {
        return Err(FeatureError::Format(format!(
            "expected {} payload bytes, found {}",
            n * dim * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((n, dim, values))
}

pub fn write_kfea(path: &Path, n: usize, dim: usize, values: &[f64]) -> Result<(), FeatureError> {
    fs::write(path, encode_kfea(n, dim, values)).map_err(|e| FeatureError::Io(e.to_string()))
}

pub fn read_kfea(path: &Path) -> Result<(usize, usize, Vec<f64>), FeatureError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => FeatureError::MissingFeatureFile(path.display().to_string()),
        _ => FeatureError::Io(e.to_string()),
    })?;
    decode_kfea(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_little_endian_row_major() {
        let bytes = encode_kfea(2, 1, &[1.0, -2.0]);
        assert_eq!(&bytes[..4], b"KFEA");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(decode_kfea(&bytes).unwrap(), (2, 1, vec![1.0, -2.0]));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut bytes = encode_kfea(2, 2, &[0.0; 4]);
        bytes.pop();
        assert!(decode_kfea(&bytes).is_err());
    }

    #[test]
    fn missing_file() {
        let err = read_kfea(Path::new("/nonexistent/x.kfea")).unwrap_err();
        assert!(matches!(err, FeatureError::MissingFeatureFile(_)));
    }
}
