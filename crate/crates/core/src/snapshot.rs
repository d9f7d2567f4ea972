//! Snapshot selection and checkpoint persistence.
//!
//! Checkpoint files are self-describing: ASCII magic `EEKD`, a u32
//! little-endian version, a u64 little-endian metadata length, UTF-8 JSON
//! metadata (architecture, epoch, schedule kind, teacher seed, tensor
//! manifest), then the tensor payloads as little-endian f64 in manifest
//! order. Momentum buffers are not persisted; snapshots are inference-only
//! teachers.

use crate::error::{EekdError, Result};
use crate::mlp::{MlpSpec, ParamSet};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EEKD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Frozen teacher parameters captured at the end of `epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub epoch: usize,
    pub schedule_kind: String,
    pub teacher_seed: u64,
}

impl Checkpoint {
    /// Momentum buffers are cleared on capture; a checkpoint never carries
    /// optimizer state.
    pub fn new(
        spec: MlpSpec,
        mut params: ParamSet,
        epoch: usize,
        schedule_kind: impl Into<String>,
        teacher_seed: u64,
    ) -> Result<Self> {
        if !params.matches_spec(&spec) {
            return Err(EekdError::DimensionMismatch {
                axis: "checkpoint parameter shapes",
                expected: spec.num_layers(),
                found: params.weights.len(),
            });
        }
        params.reset_momentum();
        Ok(Checkpoint {
            spec,
            params,
            epoch,
            schedule_kind: schedule_kind.into(),
            teacher_seed,
        })
    }
}

/// Ordered snapshots from one teacher run: strictly increasing epochs, a
/// single shared architecture, the last entry being the final-epoch model.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    checkpoints: Vec<Checkpoint>,
}

impl SnapshotSet {
    pub fn new(checkpoints: Vec<Checkpoint>) -> Result<Self> {
        let first = checkpoints
            .first()
            .ok_or_else(|| EekdError::Contract("snapshot set must be non-empty".into()))?;
        for pair in checkpoints.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(EekdError::Contract(format!(
                    "snapshot epochs must strictly increase, got {} then {}",
                    pair[0].epoch, pair[1].epoch
                )));
            }
        }
        if checkpoints.iter().any(|c| c.spec != first.spec) {
            return Err(EekdError::Contract(
                "snapshots in one set must share an architecture".into(),
            ));
        }
        Ok(SnapshotSet { checkpoints })
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    /// The final-epoch model.
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("non-empty by construction")
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.checkpoints[0].spec
    }
}

/// Uniform capture points: `round(i E / M)` for `i = 1..=M` with half-up
/// rounding, computed in integers as `(2 i E + M) / (2 M)`. The result is
/// strictly increasing and ends at `E` whenever `M <= E`.
pub fn snapshot_epochs(total_epochs: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(EekdError::InvalidConfig(
            "snapshot count must be positive".into(),
        ));
    }
    if m > total_epochs {
        return Err(EekdError::InvalidConfig(format!(
            "cannot take {m} snapshots over {total_epochs} epochs"
        )));
    }
    Ok((1..=m)
        .map(|i| (2 * i * total_epochs + m) / (2 * m))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    spec: MlpSpec,
    epoch: usize,
    schedule_kind: String,
    teacher_seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize, PartialEq, Eq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn manifest_for(spec: &MlpSpec) -> Vec<TensorEntry> {
    let dims = spec.layer_dims();
    let mut entries = Vec::with_capacity(2 * spec.num_layers());
    for l in 0..spec.num_layers() {
        entries.push(TensorEntry {
            name: format!("w{l}"),
            shape: vec![dims[l], dims[l + 1]],
        });
        entries.push(TensorEntry {
            name: format!("b{l}"),
            shape: vec![dims[l + 1]],
        });
    }
    entries
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let metadata = Metadata {
        spec: checkpoint.spec.clone(),
        epoch: checkpoint.epoch,
        schedule_kind: checkpoint.schedule_kind.clone(),
        teacher_seed: checkpoint.teacher_seed,
        tensors: manifest_for(&checkpoint.spec),
    };
    let metadata_bytes = serde_json::to_vec(&metadata)
        .map_err(|e| EekdError::CheckpointCorrupt(format!("metadata encoding failed: {e}")))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    out.write_u64::<LittleEndian>(metadata_bytes.len() as u64)?;
    out.write_all(&metadata_bytes)?;
    for l in 0..checkpoint.spec.num_layers() {
        for &v in checkpoint.params.weights[l].data() {
            out.write_f64::<LittleEndian>(v)?;
        }
        for &v in checkpoint.params.biases[l].data() {
            out.write_f64::<LittleEndian>(v)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut input = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(EekdError::CheckpointMagic { found: magic });
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(EekdError::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let metadata_len = input.read_u64::<LittleEndian>()? as usize;
    let mut metadata_bytes = vec![0u8; metadata_len];
    input.read_exact(&mut metadata_bytes).map_err(|e| {
        EekdError::CheckpointCorrupt(format!("metadata shorter than header claims: {e}"))
    })?;
    let metadata: Metadata = serde_json::from_slice(&metadata_bytes)
        .map_err(|e| EekdError::CheckpointCorrupt(format!("metadata is not valid JSON: {e}")))?;

    metadata.spec.validate()?;
    if metadata.tensors != manifest_for(&metadata.spec) {
        return Err(EekdError::CheckpointCorrupt(
            "tensor manifest does not match the architecture".into(),
        ));
    }

    let mut params = ParamSet::zeros(&metadata.spec);
    for l in 0..metadata.spec.num_layers() {
        read_tensor_payload(&mut input, &mut params.weights[l])?;
        read_tensor_payload(&mut input, &mut params.biases[l])?;
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(EekdError::CheckpointCorrupt(
            "payload longer than the manifest describes".into(),
        ));
    }

    Checkpoint::new(
        metadata.spec,
        params,
        metadata.epoch,
        metadata.schedule_kind,
        metadata.teacher_seed,
    )
}

fn read_tensor_payload(input: &mut impl Read, tensor: &mut Tensor) -> Result<()> {
    for v in tensor.data_mut() {
        *v = input
            .read_f64::<LittleEndian>()
            .map_err(|e| EekdError::CheckpointCorrupt(format!("payload truncated: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{forward, mlp_init};

    fn sample_checkpoint() -> Checkpoint {
        let spec = MlpSpec::new(3, vec![5, 4], 2).unwrap();
        let params = mlp_init(&spec, 42);
        Checkpoint::new(spec, params, 17, "cosine", 42).unwrap()
    }

    #[test]
    fn uniform_epochs_match_known_cases() {
        assert_eq!(
            snapshot_epochs(200, 5).unwrap(),
            vec![40, 80, 120, 160, 200]
        );
        assert_eq!(snapshot_epochs(60, 5).unwrap(), vec![12, 24, 36, 48, 60]);
        assert_eq!(snapshot_epochs(10, 1).unwrap(), vec![10]);
        // Half-up rounding on the non-divisible case: 2.5, 5, 7.5, 10.
        assert_eq!(snapshot_epochs(10, 4).unwrap(), vec![3, 5, 8, 10]);
    }

    #[test]
    fn uniform_epochs_always_increase_and_end_at_total() {
        for total in 1..=50 {
            for m in 1..=total {
                let epochs = snapshot_epochs(total, m).unwrap();
                assert_eq!(epochs.len(), m);
                assert_eq!(*epochs.last().unwrap(), total);
                for pair in epochs.windows(2) {
                    assert!(pair[0] < pair[1], "E={total} M={m}: {epochs:?}");
                }
                assert!(epochs[0] >= 1);
            }
        }
    }

    #[test]
    fn too_many_snapshots_is_a_config_error() {
        assert!(snapshot_epochs(5, 6).is_err());
        assert!(snapshot_epochs(5, 0).is_err());
    }

    #[test]
    fn checkpoint_drops_momentum_state() {
        let spec = MlpSpec::new(2, vec![3], 2).unwrap();
        let mut params = mlp_init(&spec, 1);
        params.vel_weights[0].data_mut().fill(0.5);
        let ckpt = Checkpoint::new(spec, params, 1, "cosine", 1).unwrap();
        assert!(ckpt.params.vel_weights[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snapshot_set_enforces_ordering_and_shared_spec() {
        let a = sample_checkpoint();
        let mut b = a.clone();
        b.epoch = 20;
        assert!(SnapshotSet::new(vec![a.clone(), b.clone()]).is_ok());
        assert!(SnapshotSet::new(vec![b.clone(), a.clone()]).is_err());
        assert!(SnapshotSet::new(vec![a.clone(), a.clone()]).is_err());
        assert!(SnapshotSet::new(vec![]).is_err());

        let other_spec = MlpSpec::new(3, vec![6], 2).unwrap();
        let other = Checkpoint::new(
            other_spec.clone(),
            mlp_init(&other_spec, 3),
            30,
            "cosine",
            3,
        )
        .unwrap();
        assert!(SnapshotSet::new(vec![a, other]).is_err());
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.eekd");
        let original = sample_checkpoint();
        save_checkpoint(&original, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, original);

        let inputs = Tensor::matrix(2, 3, vec![0.1, -0.5, 0.9, 1.5, 0.0, -2.0]).unwrap();
        let a = forward(&original.spec, &original.params, &inputs).unwrap();
        let b = forward(&loaded.spec, &loaded.params, &inputs).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.eekd");
        std::fs::write(&path, b"XXXXrest-of-file-irrelevant").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(EekdError::CheckpointMagic { found }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.eekd");
        let mut f = File::create(&path).unwrap();
        f.write_all(b"EEKD").unwrap();
        f.write_all(&2u32.to_le_bytes()).unwrap();
        f.write_all(&0u64.to_le_bytes()).unwrap();
        drop(f);
        assert!(matches!(
            load_checkpoint(&path),
            Err(EekdError::CheckpointVersion {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.eekd");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(EekdError::CheckpointCorrupt(_))
        ));
    }

    #[test]
    fn trailing_bytes_are_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("long.eekd");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(EekdError::CheckpointCorrupt(_))
        ));
    }

    #[test]
    fn metadata_shorter_than_header_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lying-header.eekd");
        let mut f = File::create(&path).unwrap();
        f.write_all(b"EEKD").unwrap();
        f.write_all(&1u32.to_le_bytes()).unwrap();
        f.write_all(&1000u64.to_le_bytes()).unwrap();
        f.write_all(b"{}").unwrap();
        drop(f);
        assert!(matches!(
            load_checkpoint(&path),
            Err(EekdError::CheckpointCorrupt(_))
        ));
    }
}
