//! The six residual block variants.
//!
//! Every block computes `post(x_short + F(x))` where `F` is the branch, a
//! stride-1 sequence of convolutions, batch norms, and ReLUs, and `x_short`
//! is the parameter-free shortcut: the input itself, zero-padded with new
//! trailing channels when the block doubles its width. The variants differ
//! only in where the two batch norms and the activations sit relative to
//! the addition:
//!
//! | kind | branch              | after the addition |
//! |------|---------------------|--------------------|
//! | RB1  | C→B→R→C→B           | R                  |
//! | RB2  | C→B→R→C             | B→R                |
//! | RB3  | C→B→R→C→B→R         | —                  |
//! | RB4  | R→C→B→R→C→B         | —                  |
//! | RB5  | B→R→C→B→R→C         | —                  |
//! | RB6  | C→R→C→B             | B→R                |
//!
//! Each kind carries exactly two batch norms. RB5 is the only kind whose
//! first norm sees the block's *input* channels, which makes its expansion
//! blocks slightly cheaper than everyone else's — the source of the
//! network-total difference checked in the model ledger tests.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, BatchNormSpec, Conv, ConvSpec, LayerNode, Mode, ParamKind, Rank, Relu,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which of the six wirings a block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    Rb1,
    Rb2,
    Rb3,
    Rb4,
    Rb5,
    Rb6,
}

impl BlockKind {
    pub fn all() -> [BlockKind; 6] {
        [
            BlockKind::Rb1,
            BlockKind::Rb2,
            BlockKind::Rb3,
            BlockKind::Rb4,
            BlockKind::Rb5,
            BlockKind::Rb6,
        ]
    }

    pub fn as_u8(self) -> u8 {
        match self {
            BlockKind::Rb1 => 1,
            BlockKind::Rb2 => 2,
            BlockKind::Rb3 => 3,
            BlockKind::Rb4 => 4,
            BlockKind::Rb5 => 5,
            BlockKind::Rb6 => 6,
        }
    }

    pub fn from_u8(v: u8) -> Option<BlockKind> {
        BlockKind::all().into_iter().find(|k| k.as_u8() == v)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RB{}", self.as_u8())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<BlockKind> {
        let t = s.trim().to_ascii_uppercase();
        match t.strip_prefix("RB").and_then(|d| d.parse::<u8>().ok()) {
            Some(v) if (1..=6).contains(&v) => Ok(BlockKind::from_u8(v).unwrap()),
            _ => Err(Error::invalid(format!(
                "unknown residual block kind {s:?}; expected RB1..RB6"
            ))),
        }
    }
}

/// Template for one slot of a wiring; each occurrence builds a fresh layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    /// Convolution from block input channels to output channels.
    ConvIn,
    /// Convolution from output channels to output channels.
    ConvOut,
    /// Batch norm over the block's input channels (RB5 only).
    BnIn,
    /// Batch norm over the block's output channels.
    BnOut,
    Relu,
}

/// The single source of truth for the six wirings: (branch, post-addition).
fn wiring(kind: BlockKind) -> (&'static [Slot], &'static [Slot]) {
    use Slot::*;
    match kind {
        BlockKind::Rb1 => (&[ConvIn, BnOut, Relu, ConvOut, BnOut], &[Relu]),
        BlockKind::Rb2 => (&[ConvIn, BnOut, Relu, ConvOut], &[BnOut, Relu]),
        BlockKind::Rb3 => (&[ConvIn, BnOut, Relu, ConvOut, BnOut, Relu], &[]),
        BlockKind::Rb4 => (&[Relu, ConvIn, BnOut, Relu, ConvOut, BnOut], &[]),
        BlockKind::Rb5 => (&[BnIn, Relu, ConvIn, BnOut, Relu, ConvOut], &[]),
        BlockKind::Rb6 => (&[ConvIn, Relu, ConvOut, BnOut], &[BnOut, Relu]),
    }
}

fn block_kernel(rank: Rank) -> Vec<usize> {
    match rank {
        Rank::One => vec![3],
        Rank::Two => vec![3, 3],
    }
}

/// A residual block: branch, post-addition layers, and the shortcut policy.
#[derive(Debug, Clone)]
pub struct ResBlock {
    kind: BlockKind,
    rank: Rank,
    in_channels: usize,
    out_channels: usize,
    branch: Vec<LayerNode>,
    post: Vec<LayerNode>,
    /// Input shape of the pending forward, for the shortcut adjoint.
    cache: Option<Vec<usize>>,
}

/// Builds one block. The only legal widths are `c_out == c_in` (identity
/// shortcut) and `c_out == 2 * c_in` (zero-padded expansion shortcut).
pub fn build_block(
    kind: BlockKind,
    rank: Rank,
    c_in: usize,
    c_out: usize,
    rng: &mut Rng,
) -> Result<ResBlock> {
    if c_in == 0 || (c_out != c_in && c_out != 2 * c_in) {
        return Err(Error::invalid(format!(
            "residual block supports c_out == c_in or c_out == 2*c_in, got {c_in} -> {c_out}"
        )));
    }
    let kernel = block_kernel(rank);
    let stride = vec![1; kernel.len()];
    let mut realize = |slots: &[Slot]| -> Result<Vec<LayerNode>> {
        slots
            .iter()
            .map(|slot| {
                Ok(match slot {
                    Slot::ConvIn => LayerNode::Conv(Conv::new(
                        ConvSpec {
                            rank,
                            kernel: kernel.clone(),
                            stride: stride.clone(),
                            in_channels: c_in,
                            out_channels: c_out,
                        },
                        rng,
                    )?),
                    Slot::ConvOut => LayerNode::Conv(Conv::new(
                        ConvSpec {
                            rank,
                            kernel: kernel.clone(),
                            stride: stride.clone(),
                            in_channels: c_out,
                            out_channels: c_out,
                        },
                        rng,
                    )?),
                    Slot::BnIn => LayerNode::BatchNorm(BatchNorm::new(BatchNormSpec::new(c_in))?),
                    Slot::BnOut => LayerNode::BatchNorm(BatchNorm::new(BatchNormSpec::new(c_out))?),
                    Slot::Relu => LayerNode::Relu(Relu::new()),
                })
            })
            .collect()
    };
    let (branch_slots, post_slots) = wiring(kind);
    let branch = realize(branch_slots)?;
    let post = realize(post_slots)?;
    Ok(ResBlock {
        kind,
        rank,
        in_channels: c_in,
        out_channels: c_out,
        branch,
        post,
        cache: None,
    })
}

/// Parameter rows of one block in wiring order, computed from arithmetic
/// alone: (short name, trainable, non_trainable). Parameter-free slots are
/// omitted.
pub fn block_param_rows(
    kind: BlockKind,
    rank: Rank,
    c_in: usize,
    c_out: usize,
) -> Vec<(String, usize, usize)> {
    let taps: usize = block_kernel(rank).iter().product();
    let (branch, post) = wiring(kind);
    let mut rows = Vec::new();
    let (mut convs, mut bns) = (0usize, 0usize);
    for slot in branch.iter().chain(post) {
        match slot {
            Slot::ConvIn => {
                convs += 1;
                rows.push((format!("conv{convs}"), (taps * c_in + 1) * c_out, 0));
            }
            Slot::ConvOut => {
                convs += 1;
                rows.push((format!("conv{convs}"), (taps * c_out + 1) * c_out, 0));
            }
            Slot::BnIn => {
                bns += 1;
                rows.push((format!("bn{bns}"), 2 * c_in, 2 * c_in));
            }
            Slot::BnOut => {
                bns += 1;
                rows.push((format!("bn{bns}"), 2 * c_out, 2 * c_out));
            }
            Slot::Relu => {}
        }
    }
    rows
}

/// (trainable, non_trainable) of one block from arithmetic alone.
pub fn block_param_count(kind: BlockKind, rank: Rank, c_in: usize, c_out: usize) -> (usize, usize) {
    block_param_rows(kind, rank, c_in, c_out)
        .iter()
        .fold((0, 0), |(t, n), row| (t + row.1, n + row.2))
}

impl ResBlock {
    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn branch_mut(&mut self) -> &mut [LayerNode] {
        &mut self.branch
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = *input.shape().last().ok_or_else(|| Error::shape("scalar block input"))?;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "block expects {} input channels, got {}",
                self.in_channels, c
            )));
        }
        let mut branch_out = input.clone();
        for layer in &mut self.branch {
            branch_out = layer.forward(&branch_out, mode)?;
        }
        let shortcut = if self.out_channels == self.in_channels {
            input.clone()
        } else {
            expand_channels(input, self.out_channels)
        };
        if branch_out.shape() != shortcut.shape() {
            return Err(Error::layer(format!(
                "branch output shape {:?} does not match shortcut shape {:?}",
                branch_out.shape(),
                shortcut.shape()
            )));
        }
        branch_out.add_assign(&shortcut)?;
        let mut out = branch_out;
        for layer in &mut self.post {
            out = layer.forward(&out, mode)?;
        }
        self.cache = Some(input.shape().to_vec());
        Ok(out)
    }

    /// Sums the branch and shortcut adjoints; post-addition layers run first.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let in_shape = self
            .cache
            .take()
            .ok_or_else(|| Error::layer("block backward without a cached forward"))?;
        let mut g = upstream.clone();
        for layer in self.post.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        let g_short = if self.out_channels == self.in_channels {
            g.clone()
        } else {
            shrink_channels(&g, self.in_channels)
        };
        let mut dx = g;
        for layer in self.branch.iter_mut().rev() {
            dx = layer.backward(&dx)?;
        }
        if dx.shape() != in_shape.as_slice() {
            return Err(Error::layer(format!(
                "branch adjoint produced shape {:?}, expected {:?}",
                dx.shape(),
                in_shape
            )));
        }
        dx.add_assign(&g_short)?;
        Ok(dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor, &mut Tensor)) {
        for layer in self.branch.iter_mut().chain(&mut self.post) {
            layer.visit_params(f);
        }
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in self.branch.iter_mut().chain(&mut self.post) {
            layer.visit_state(f);
        }
    }

    pub fn visit_tensors(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in self.branch.iter_mut().chain(&mut self.post) {
            layer.visit_tensors(f);
        }
    }

    /// (trainable, non_trainable) over the live layers.
    pub fn param_count(&self) -> (usize, usize) {
        self.branch
            .iter()
            .chain(&self.post)
            .map(LayerNode::param_count)
            .fold((0, 0), |(t, n), (lt, ln)| (t + lt, n + ln))
    }
}

/// Zero-padded channel expansion: existing channels keep their positions,
/// new channels are appended as zeros.
fn expand_channels(x: &Tensor, c_out: usize) -> Tensor {
    let c_in = *x.shape().last().expect("non-scalar");
    debug_assert!(c_out >= c_in);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = c_out;
    let mut out = Tensor::zeros(&shape);
    for (orow, xrow) in out
        .data_mut()
        .chunks_exact_mut(c_out)
        .zip(x.data().chunks_exact(c_in))
    {
        orow[..c_in].copy_from_slice(xrow);
    }
    out
}

/// Adjoint of `expand_channels`: keep the gradient of the surviving channels.
fn shrink_channels(g: &Tensor, c_in: usize) -> Tensor {
    let c_out = *g.shape().last().expect("non-scalar");
    debug_assert!(c_out >= c_in);
    let mut shape = g.shape().to_vec();
    *shape.last_mut().unwrap() = c_in;
    let mut out = Tensor::zeros(&shape);
    for (orow, grow) in out
        .data_mut()
        .chunks_exact_mut(c_in)
        .zip(g.data().chunks_exact(c_out))
    {
        orow.copy_from_slice(&grow[..c_in]);
    }
    out
}

/// Zeroes the last parametered layer of the branch so `F(x) == 0`: a final
/// conv gets zero weights and bias, a final batch norm zero gamma and beta.
/// Exposed for tests that exercise the pure-shortcut path.
pub fn zero_branch_tail(block: &mut ResBlock) {
    for layer in block.branch.iter_mut().rev() {
        match layer {
            LayerNode::Conv(c) => {
                c.weight_mut().fill(0.0);
                c.bias_mut().fill(0.0);
                return;
            }
            LayerNode::BatchNorm(_) => {
                let mut kinds = Vec::new();
                layer.visit_params(&mut |kind, value, _| {
                    kinds.push(kind);
                    value.fill(0.0);
                });
                debug_assert_eq!(kinds, [ParamKind::Gamma, ParamKind::Beta]);
                return;
            }
            _ => continue,
        }
    }
}
