//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "RNR1" | version u32 | N u64 | M u64 | d u64 | mode u8 | ranker u8 | mu f64
//! then for every parameter group in storage order: values, accumulators
//! (f64, row-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{Group, Matrix, Param, ParamStore};
use crate::trainer::{Mode, Ranker};

pub const MAGIC: &[u8; 4] = b"RNR1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 3 + 2 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mode: Mode,
    pub ranker: Ranker,
    pub store: ParamStore,
}

fn mode_code(mode: Mode) -> u8 {
    match mode {
        Mode::SingleRank => 0,
        Mode::SingleRate => 1,
        Mode::Vanilla => 2,
        Mode::Rnr => 3,
    }
}

fn ranker_code(ranker: Ranker) -> u8 {
    match ranker {
        Ranker::Bpr => 0,
        Ranker::Cdae => 1,
    }
}

fn group_shape(group: Group, n: usize, m: usize, d: usize) -> (usize, usize) {
    match group {
        Group::Users => (n, d),
        Group::Items | Group::ItemDev | Group::CdaeEncoder => (m, d),
        Group::FcWeight => (d, d),
        Group::FcBias | Group::CdaeHiddenBias => (1, d),
        Group::UserBias => (n, 1),
        Group::ItemBias | Group::RankItemBias | Group::CdaeOutputBias => (m, 1),
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let s = &ckpt.store;
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len(s.n_users, s.n_items, s.dim).unwrap_or(0));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [s.n_users, s.n_items, s.dim] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(mode_code(ckpt.mode));
    out.push(ranker_code(ckpt.ranker));
    out.extend_from_slice(&s.mu.to_le_bytes());
    for g in Group::ALL {
        let p = s.param(g);
        for x in p.value.as_slice().iter().chain(p.accum.as_slice()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn payload_len(n: usize, m: usize, d: usize) -> Option<usize> {
    Group::ALL.iter().try_fold(0usize, |acc, &g| {
        let (r, c) = group_shape(g, n, m, d);
        r.checked_mul(c)?.checked_mul(16)?.checked_add(acc)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.f64()).collect();
        Matrix::from_vec(rows, cols, data).expect("length matches shape")
    }
}

/// Parses a checkpoint; any structural problem is a format error and no
/// partial store is returned.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not a model checkpoint".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = u32::from_le_bytes(r.take());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version} (expected {VERSION})")));
    }
    let to_usize = |v: u64| usize::try_from(v).map_err(|_| Error::Format("dimension overflows usize".into()));
    let n = to_usize(r.u64())?;
    let m = to_usize(r.u64())?;
    let d = to_usize(r.u64())?;
    let [mode_byte, ranker_byte] = r.take::<2>();
    let mode = match mode_byte {
        0 => Mode::SingleRank,
        1 => Mode::SingleRate,
        2 => Mode::Vanilla,
        3 => Mode::Rnr,
        b => return Err(Error::Format(format!("unknown mode code {b}"))),
    };
    let ranker = match ranker_byte {
        0 => Ranker::Bpr,
        1 => Ranker::Cdae,
        b => return Err(Error::Format(format!("unknown ranker code {b}"))),
    };
    let mu = r.f64();
    let expected = payload_len(n, m, d)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload size {} does not match header (expected {expected} bytes{})",
            bytes.len(),
            if bytes.len() < expected { ", file truncated" } else { "" }
        )));
    }

    let mut params: Vec<Param> = Vec::with_capacity(Group::ALL.len());
    for g in Group::ALL {
        let (rows, cols) = group_shape(g, n, m, d);
        let value = r.matrix(rows, cols);
        let accum = r.matrix(rows, cols);
        params.push(Param { value, accum });
    }
    let mut it = params.into_iter();
    let mut next = || it.next().expect("one param per group");
    let store = ParamStore {
        n_users: n,
        n_items: m,
        dim: d,
        mu,
        users: next(),
        items: next(),
        item_dev: next(),
        fc_weight: next(),
        fc_bias: next(),
        user_bias: next(),
        item_bias: next(),
        rank_item_bias: next(),
        cdae_encoder: next(),
        cdae_hidden_bias: next(),
        cdae_output_bias: next(),
    };
    Ok(Checkpoint { mode, ranker, store })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint and checks it against the expected `(N, M, d)`.
pub fn load_checkpoint_for(path: &Path, n_users: usize, n_items: usize, dim: usize) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let s = &ckpt.store;
    if s.dim != dim {
        return Err(Error::shape("checkpoint embedding dim", dim, s.dim));
    }
    if s.n_users != n_users {
        return Err(Error::shape("checkpoint user count", n_users, s.n_users));
    }
    if s.n_items != n_items {
        return Err(Error::shape("checkpoint item count", n_items, s.n_items));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_params, Hyperparams};

    fn sample() -> Checkpoint {
        let hp = Hyperparams {
            dim: 3,
            seed: 9,
            ..Hyperparams::default()
        };
        let mut store = init_params(4, 5, &hp).unwrap();
        store.mu = 3.25;
        store.item_dev.value.row_mut(2)[1] = -0.125;
        store.users.accum.row_mut(0)[0] = 0.5;
        Checkpoint {
            mode: Mode::Rnr,
            ranker: Ranker::Cdae,
            store,
        }
    }

    #[test]
    fn round_trip_is_a_fixpoint() {
        let ckpt = sample();
        let bytes = encode(&ckpt);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode(&back), bytes);
        assert_eq!(&bytes[..4], b"RNR1");
    }

    #[test]
    fn truncated_or_padded_files_are_rejected() {
        let bytes = encode(&sample());
        for cut in [0, 3, HEADER_LEN - 1, HEADER_LEN, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
        }
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(matches!(decode(&padded), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rnr");
        save_checkpoint(&sample(), &path).unwrap();
        let err = load_checkpoint_for(&path, 4, 5, 50).unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 50, actual: 3, .. }));
        let msg = err.to_string();
        assert!(msg.contains("50") && msg.contains('3'), "{msg}");
        assert_eq!(err.exit_code(), 2);
        assert!(load_checkpoint_for(&path, 4, 5, 3).is_ok());
    }
}
