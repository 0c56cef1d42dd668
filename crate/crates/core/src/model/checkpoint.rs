//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"RBN1"
//! version  u8 = 1
//! rank     u8 (1 | 2)
//! kind     u8 (1..=6)
//! flags    u8 = 0 (reserved)
//! n_classes  u32
//! plan     in_channels u32, stem_filters u32,
//!          stem_kernel u32 x arity, stem_stride u32 x arity,
//!          stem_pool   u8 flag (+ u32 x arity),
//!          input_extent u32 x arity,
//!          n_stages u32, then per stage:
//!            width u32, depth u32, pool u8 flag (+ u32 x arity)
//! tensors  n_tensors u32, then per tensor:
//!            ndim u8, dims u32 x ndim, values f32 x prod(dims)
//! ```
//!
//! Tensors appear in network traversal order: stem, stages (block layers
//! in wiring order, conv as weight/bias, batch norm as gamma/beta/moving
//! mean/moving variance), classifier weight, classifier bias. Values are
//! stored at 32-bit precision. Decoding failures report the byte offset.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::layers::Rank;
use crate::resblocks::BlockKind;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{ArchPlan, Network, StagePlan};

const MAGIC: &[u8; 4] = b"RBN1";
const VERSION: u8 = 1;

/// Serializes the network to `path` atomically.
pub fn save_checkpoint(network: &mut Network, path: &Path) -> Result<()> {
    let bytes = encode(network);
    atomic_write(path, &bytes)
}

/// Rebuilds a network from `path`; the architecture comes from the stored
/// plan and every tensor is restored at its stored 32-bit precision.
pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

fn encode(network: &mut Network) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    let plan = network.plan().clone();
    buf.push(plan.rank.as_u8());
    buf.push(network.kind().as_u8());
    buf.push(0);
    push_u32(&mut buf, plan.n_classes);
    push_u32(&mut buf, plan.in_channels);
    push_u32(&mut buf, plan.stem_filters);
    push_extents(&mut buf, &plan.stem_kernel);
    push_extents(&mut buf, &plan.stem_stride);
    push_opt_extents(&mut buf, plan.stem_pool.as_deref());
    push_extents(&mut buf, &plan.input_extent);
    push_u32(&mut buf, plan.stages.len());
    for stage in &plan.stages {
        push_u32(&mut buf, stage.width);
        push_u32(&mut buf, stage.depth);
        push_opt_extents(&mut buf, stage.pool.as_deref());
    }

    let mut count = 0u32;
    network.visit_tensors(&mut |_| count += 1);
    push_u32(&mut buf, count as usize);
    network.visit_tensors(&mut |t| {
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    buf
}

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_extents(buf: &mut Vec<u8>, extents: &[usize]) {
    for &e in extents {
        push_u32(buf, e);
    }
}

fn push_opt_extents(buf: &mut Vec<u8>, extents: Option<&[usize]>) {
    match extents {
        Some(e) => {
            buf.push(1);
            push_extents(buf, e);
        }
        None => buf.push(0),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::checkpoint(
                format!("truncated while reading {what}"),
                self.pos as u64,
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn extent(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn extents(&mut self, arity: usize, what: &str) -> Result<Vec<usize>> {
        (0..arity).map(|_| self.extent(what)).collect()
    }

    fn opt_extents(&mut self, arity: usize, what: &str) -> Result<Option<Vec<usize>>> {
        match self.u8(what)? {
            0 => Ok(None),
            1 => Ok(Some(self.extents(arity, what)?)),
            v => Err(Error::checkpoint(
                format!("bad presence flag {v} for {what}"),
                (self.pos - 1) as u64,
            )),
        }
    }
}

fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::checkpoint(
            format!("bad magic {magic:02x?}, expected {MAGIC:02x?}"),
            0,
        ));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::checkpoint(
            format!("unsupported version {version}, expected {VERSION}"),
            (r.pos - 1) as u64,
        ));
    }
    let rank_byte = r.u8("rank")?;
    let rank = Rank::from_u8(rank_byte).ok_or_else(|| {
        Error::checkpoint(format!("bad rank byte {rank_byte}"), (r.pos - 1) as u64)
    })?;
    let kind_byte = r.u8("block kind")?;
    let kind = BlockKind::from_u8(kind_byte).ok_or_else(|| {
        Error::checkpoint(format!("bad block kind byte {kind_byte}"), (r.pos - 1) as u64)
    })?;
    let flags = r.u8("flags")?;
    if flags != 0 {
        return Err(Error::checkpoint(
            format!("unsupported flags {flags:#04x}"),
            (r.pos - 1) as u64,
        ));
    }
    let n_classes = r.extent("class count")?;
    let arity = match rank {
        Rank::One => 1,
        Rank::Two => 2,
    };
    let in_channels = r.extent("input channels")?;
    let stem_filters = r.extent("stem filters")?;
    let stem_kernel = r.extents(arity, "stem kernel")?;
    let stem_stride = r.extents(arity, "stem stride")?;
    let stem_pool = r.opt_extents(arity, "stem pool")?;
    let input_extent = r.extents(arity, "input extent")?;
    let n_stages = r.extent("stage count")?;
    if n_stages > 64 {
        return Err(Error::checkpoint(
            format!("implausible stage count {n_stages}"),
            (r.pos - 4) as u64,
        ));
    }
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let width = r.extent("stage width")?;
        let depth = r.extent("stage depth")?;
        let pool = r.opt_extents(arity, "stage pool")?;
        stages.push(StagePlan { width, depth, pool });
    }
    let plan = ArchPlan {
        rank,
        input_extent,
        in_channels,
        stem_filters,
        stem_kernel,
        stem_stride,
        stem_pool,
        stages,
        n_classes,
    };
    plan.validate()
        .map_err(|e| Error::checkpoint(format!("stored plan invalid: {e}"), r.pos as u64))?;

    let mut network = Network::build(plan, kind, &mut Rng::new(0))?;
    let n_tensors = r.extent("tensor count")?;
    let mut expected = 0usize;
    network.visit_tensors(&mut |_| expected += 1);
    if n_tensors != expected {
        return Err(Error::checkpoint(
            format!("{n_tensors} tensors stored, architecture has {expected}"),
            (r.pos - 4) as u64,
        ));
    }
    let mut restore: Result<()> = Ok(());
    network.visit_tensors(&mut |t: &mut Tensor| {
        if restore.is_err() {
            return;
        }
        restore = (|| {
            let at = r.pos;
            let ndim = r.u8("tensor rank")? as usize;
            let dims = r.extents(ndim, "tensor dims")?;
            if dims != t.shape() {
                return Err(Error::checkpoint(
                    format!("tensor shape {:?} stored, expected {:?}", dims, t.shape()),
                    at as u64,
                ));
            }
            let raw = r.take(4 * t.len(), "tensor values")?;
            for (v, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            }
            Ok(())
        })();
    });
    restore?;
    if r.pos != bytes.len() {
        return Err(Error::checkpoint(
            format!("{} trailing bytes after the last tensor", bytes.len() - r.pos),
            r.pos as u64,
        ));
    }
    Ok(network)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::model::tiny1d_plan;

    fn tiny_net(seed: u64) -> Network {
        let mut rng = Rng::new(seed);
        Network::build(tiny1d_plan(256, 10), BlockKind::Rb3, &mut rng).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.rbn");
        let p2 = dir.path().join("b.rbn");
        let mut net = tiny_net(5);
        save_checkpoint(&mut net, &p1).unwrap();
        let mut restored = load_checkpoint(&p1).unwrap();
        save_checkpoint(&mut restored, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn restored_network_reproduces_the_forward_pass() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.rbn");
        let mut net = tiny_net(6);
        let mut rng = Rng::new(99);
        let x = rng.uniform_tensor(&[2, 256, 1], -1.0, 1.0);
        let before = net.forward(&x, Mode::Infer).unwrap();
        save_checkpoint(&mut net, &path).unwrap();
        let mut restored = load_checkpoint(&path).unwrap();
        assert_eq!(restored.kind(), BlockKind::Rb3);
        let after = restored.forward(&x, Mode::Infer).unwrap();
        // Storage is 32-bit, so parity is approximate.
        let worst = before
            .data()
            .iter()
            .zip(after.data())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "worst relative deviation {worst}");
    }

    #[test]
    fn corrupted_header_is_rejected_with_an_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.rbn");
        let mut net = tiny_net(7);
        save_checkpoint(&mut net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().to_string().contains("byte 0"));

        let mut vbytes = std::fs::read(&path).unwrap();
        vbytes[4] = 9;
        let err = decode(&vbytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        let good = std::fs::read(&path).unwrap();
        let truncated = &good[..good.len() - 3];
        let err = decode(truncated).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let mut extended = std::fs::read(&path).unwrap();
        extended.extend_from_slice(&[0, 0, 0]);
        let err = decode(&extended).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }
}
