use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Magic bytes opening every embedding (and codebook) matrix block.
pub const EMBEDDING_MAGIC: &[u8; 8] = b"SIDEMB01";

const HEADER_LEN: usize = 16;
const FOOTER_LEN: usize = 4;

/// Dense item embedding matrix, row-major, with aligned item ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    rows: Vec<f32>,
    item_ids: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, rows: Vec<f32>, item_ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be at least 1".into()));
        }
        if rows.len() != dim * item_ids.len() {
            return Err(Error::DimMismatch {
                expected: dim * item_ids.len(),
                actual: rows.len(),
            });
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite embedding value in row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingSet {
            dim,
            rows,
            item_ids,
        })
    }

    pub fn count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.rows
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Copy with every row scaled to unit L2 norm. Zero rows stay zero.
    pub fn normalized(&self) -> EmbeddingSet {
        let mut rows = self.rows.clone();
        for row in rows.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v = (f64::from(*v) / norm) as f32);
            }
        }
        EmbeddingSet {
            dim: self.dim,
            rows,
            item_ids: self.item_ids.clone(),
        }
    }
}

/// Serializes one `SIDEMB01` block: magic, u32 count, u32 dim, f32 payload, u32 CRC-32.
pub fn write_matrix_block(out: &mut Vec<u8>, count: usize, dim: usize, values: &[f32]) {
    debug_assert_eq!(values.len(), count * dim);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    let payload_start = out.len();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

/// Parses one `SIDEMB01` block starting at `bytes[0]`.
///
/// `base` is the absolute offset of `bytes[0]` in its file so that errors
/// report file positions. Returns `(count, dim, values, bytes consumed)`.
pub fn read_matrix_block(bytes: &[u8], base: u64) -> Result<(usize, usize, Vec<f32>, usize)> {
    let fail = |offset: usize, message: String| Error::EmbeddingFormat {
        offset: base + offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if &bytes[..8] != EMBEDDING_MAGIC {
        return Err(fail(0, "magic mismatch, expected SIDEMB01".into()));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(fail(12, "dim must be at least 1".into()));
    }
    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, "count × dim overflows".into()))?;
    let payload_end = HEADER_LEN + payload_len;
    if bytes.len() < payload_end {
        return Err(fail(
            bytes.len(),
            format!("truncated payload, expected {payload_len} bytes"),
        ));
    }
    if bytes.len() < payload_end + FOOTER_LEN {
        return Err(fail(bytes.len(), "truncated CRC footer".into()));
    }
    let payload = &bytes[HEADER_LEN..payload_end];
    let stored = u32::from_le_bytes(bytes[payload_end..payload_end + 4].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(fail(
            payload_end,
            format!("CRC mismatch, stored {stored:08x} computed {actual:08x}"),
        ));
    }
    let mut values = Vec::with_capacity(count * dim);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
        }
        values.push(v);
    }
    Ok((count, dim, values, payload_end + FOOTER_LEN))
}

/// The sibling id file: `<path>.ids`.
pub fn ids_path_for(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".ids");
    PathBuf::from(name)
}

/// Reads an embedding file and its sibling `.ids` file.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (count, dim, values, used) = read_matrix_block(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::EmbeddingFormat {
            offset: used as u64,
            message: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    let ids_path = ids_path_for(path);
    let ids_text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
    let item_ids: Vec<String> = ids_text.lines().map(str::to_owned).collect();
    if item_ids.len() != count {
        return Err(Error::DimMismatch {
            expected: count,
            actual: item_ids.len(),
        });
    }
    EmbeddingSet::new(dim, values, item_ids)
}

/// Writes the binary matrix and the sibling `.ids` file.
pub fn save_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(HEADER_LEN + set.rows.len() * 4 + FOOTER_LEN);
    write_matrix_block(&mut bytes, set.count(), set.dim, &set.rows);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let ids_path = ids_path_for(path);
    let mut ids = Vec::new();
    for id in &set.item_ids {
        writeln!(ids, "{id}").expect("write to Vec");
    }
    fs::write(&ids_path, ids).map_err(|e| Error::io(&ids_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("item{i}")).collect()
    }

    #[test]
    fn three_by_two() {
        let set = EmbeddingSet::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], ids(3)).unwrap();
        let mut bytes = Vec::new();
        write_matrix_block(&mut bytes, 3, 2, set.as_slice());
        assert_eq!(bytes.len(), 16 + 24 + 4);
        let (count, dim, values, used) = read_matrix_block(&bytes, 0).unwrap();
        assert_eq!((count, dim, used), (3, 2, bytes.len()));
        assert_eq!(values, set.as_slice());
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut bytes = Vec::new();
        write_matrix_block(&mut bytes, 3, 2, &[0.0; 6]);
        bytes.truncate(16 + 20);
        match read_matrix_block(&bytes, 0) {
            Err(Error::EmbeddingFormat { offset, message }) => {
                assert_eq!(offset, 36);
                assert!(message.contains("truncated payload"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn magic_mismatch_rejected() {
        let mut bytes = Vec::new();
        write_matrix_block(&mut bytes, 1, 1, &[0.5]);
        bytes[0] = b'X';
        assert!(matches!(
            read_matrix_block(&bytes, 0),
            Err(Error::EmbeddingFormat { offset: 0, .. })
        ));
    }

    #[test]
    fn non_finite_rejected_with_offset() {
        let mut bytes = Vec::new();
        // Build the block by hand so the CRC covers the NaN.
        write_matrix_block(&mut bytes, 1, 2, &[1.0, f32::NAN]);
        match read_matrix_block(&bytes, 100) {
            Err(Error::EmbeddingFormat { offset, .. }) => assert_eq!(offset, 100 + 16 + 4),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn crc_mismatch_rejected() {
        let mut bytes = Vec::new();
        write_matrix_block(&mut bytes, 1, 2, &[1.0, 2.0]);
        bytes[17] ^= 0x01;
        assert!(read_matrix_block(&bytes, 0).is_err());
    }

    #[test]
    fn random_round_trip_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f32> = (0..100 * 64).map(|_| rng.random_range(-10.0f32..10.0)).collect();
        let set = EmbeddingSet::new(64, values, ids(100)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        save_embeddings(&path, &set).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.count(), 100);
        assert_eq!(back.dim(), 64);
        assert_eq!(back.item_ids(), set.item_ids());
        assert!(back
            .as_slice()
            .iter()
            .zip(set.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
