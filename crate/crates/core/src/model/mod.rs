//! Network assembly: architecture plans, the live network, and the
//! parameter ledger.
//!
//! An [`ArchPlan`] is pure arithmetic — widths, depths, kernels, pools —
//! from which both the live [`Network`] and the [`ParamLedger`] derive.
//! The ledger never instantiates weights, so its totals serve as an
//! independent fingerprint the live network is tested against.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::error::{Error, Result};
use crate::layers::{
    same_pad, BatchNorm, BatchNormSpec, Conv, ConvSpec, DenseSoftmax, GlobalAvgPool, LayerNode,
    MaxPool, Mode, ParamKind, Rank, Relu,
};
use crate::resblocks::{block_param_rows, build_block, BlockKind, ResBlock};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One residual stage: `depth` blocks at `width` channels, then an optional
/// non-overlapping max pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub width: usize,
    pub depth: usize,
    pub pool: Option<Vec<usize>>,
}

/// Everything needed to build (or account for) a network, with no weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchPlan {
    pub rank: Rank,
    /// Nominal input spatial extents (`[length]` or `[height, width]`);
    /// the network itself is fully convolutional and accepts other extents.
    pub input_extent: Vec<usize>,
    pub in_channels: usize,
    pub stem_filters: usize,
    pub stem_kernel: Vec<usize>,
    pub stem_stride: Vec<usize>,
    pub stem_pool: Option<Vec<usize>>,
    pub stages: Vec<StagePlan>,
    pub n_classes: usize,
}

impl ArchPlan {
    /// The 34-layer 1D residual network over raw waveforms: a 80/4 stem at
    /// 48 filters, stages of 3/4/6/3 blocks at 48/96/192/384 channels with
    /// width-4 pools after the first three stages.
    pub fn m34(input_length: usize, n_classes: usize) -> Result<ArchPlan> {
        if input_length < 1024 {
            return Err(Error::invalid(format!(
                "the 1D network needs at least 1024 input samples to survive its pooling chain, got {input_length}"
            )));
        }
        let plan = ArchPlan {
            rank: Rank::One,
            input_extent: vec![input_length],
            in_channels: 1,
            stem_filters: 48,
            stem_kernel: vec![80],
            stem_stride: vec![4],
            stem_pool: Some(vec![4]),
            stages: vec![
                StagePlan { width: 48, depth: 3, pool: Some(vec![4]) },
                StagePlan { width: 96, depth: 4, pool: Some(vec![4]) },
                StagePlan { width: 192, depth: 6, pool: Some(vec![4]) },
                StagePlan { width: 384, depth: 3, pool: None },
            ],
            n_classes,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// The slim 2D counterpart over 64-band log-mel spectrograms: a 1x80
    /// stem strided 1x4 along time, one/two/three/one blocks at
    /// 48/96/192/384 channels, each stage followed by a (4,4) pool.
    ///
    /// Note the published pooling schedule cannot be run end to end: the
    /// mel axis shrinks 64 -> 16 -> 4 -> 1 across the first three (4,4)
    /// pools, so the fourth pool never fits regardless of the time extent.
    /// Construction and parameter accounting work; `forward` fails at that
    /// pool with a shape error. See [`ArchPlan::simulate`].
    pub fn slim2d(mel_bands: usize, frames: usize, n_classes: usize) -> Result<ArchPlan> {
        if mel_bands != 64 {
            return Err(Error::invalid(format!(
                "the 2D network is defined for 64 mel bands, got {mel_bands}"
            )));
        }
        if frames < 80 {
            return Err(Error::invalid(format!(
                "the 2D network needs at least 80 time frames, got {frames}"
            )));
        }
        let plan = ArchPlan {
            rank: Rank::Two,
            input_extent: vec![mel_bands, frames],
            in_channels: 1,
            stem_filters: 48,
            stem_kernel: vec![1, 80],
            stem_stride: vec![1, 4],
            stem_pool: Some(vec![1, 4]),
            stages: vec![
                StagePlan { width: 48, depth: 1, pool: Some(vec![4, 4]) },
                StagePlan { width: 96, depth: 2, pool: Some(vec![4, 4]) },
                StagePlan { width: 192, depth: 3, pool: Some(vec![4, 4]) },
                StagePlan { width: 384, depth: 1, pool: Some(vec![4, 4]) },
            ],
            n_classes,
        };
        plan.validate()?;
        Ok(plan)
    }

    fn arity(&self) -> usize {
        match self.rank {
            Rank::One => 1,
            Rank::Two => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arity = self.arity();
        if self.input_extent.len() != arity
            || self.stem_kernel.len() != arity
            || self.stem_stride.len() != arity
            || self.stem_pool.as_ref().is_some_and(|p| p.len() != arity)
            || self
                .stages
                .iter()
                .any(|s| s.pool.as_ref().is_some_and(|p| p.len() != arity))
        {
            return Err(Error::invalid(format!(
                "plan extents must all have {arity} axes for rank {}",
                self.rank.as_u8()
            )));
        }
        let all_extents = self
            .input_extent
            .iter()
            .chain(&self.stem_kernel)
            .chain(&self.stem_stride)
            .chain(self.stem_pool.iter().flatten())
            .chain(self.stages.iter().flat_map(|s| s.pool.iter().flatten()));
        if all_extents.clone().any(|&e| e == 0) {
            return Err(Error::invalid("plan extents must be positive"));
        }
        if self.in_channels == 0 || self.stem_filters == 0 {
            return Err(Error::invalid("plan channel counts must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid(format!(
                "classification needs at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid("plan needs at least one stage"));
        }
        let mut prev = self.stem_filters;
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.depth == 0 {
                return Err(Error::invalid(format!("stage {} has zero depth", i + 1)));
            }
            if stage.width != prev && stage.width != 2 * prev {
                return Err(Error::invalid(format!(
                    "stage {} width {} must equal or double the preceding width {}",
                    i + 1,
                    stage.width,
                    prev
                )));
            }
            prev = stage.width;
        }
        Ok(())
    }

    /// Walks the plan's shape arithmetic on the nominal input extent,
    /// returning (module name, spatial extents after it). Fails at the
    /// first pool whose window exceeds its input extent, naming the module
    /// and axis — which is how the published 2D pooling schedule surfaces
    /// its impossible fourth pool.
    pub fn simulate(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut steps = Vec::new();
        let mut extent = self.input_extent.clone();
        for (axis, e) in extent.iter_mut().enumerate() {
            *e = same_pad(*e, self.stem_kernel[axis], self.stem_stride[axis]).0;
        }
        steps.push(("stem.conv".to_string(), extent.clone()));
        if let Some(pool) = &self.stem_pool {
            apply_pool(&mut extent, pool, "stem.pool")?;
            steps.push(("stem.pool".to_string(), extent.clone()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            // Blocks are stride-1 and padding-preserving: extents unchanged.
            steps.push((format!("stage{}.blocks", i + 1), extent.clone()));
            if let Some(pool) = &stage.pool {
                let name = format!("stage{}.pool", i + 1);
                apply_pool(&mut extent, pool, &name)?;
                steps.push((name, extent.clone()));
            }
        }
        steps.push(("head.gap".to_string(), vec![]));
        Ok(steps)
    }

    /// Per-layer parameter rows from arithmetic alone.
    pub fn ledger(&self, kind: BlockKind) -> Result<ParamLedger> {
        self.validate()?;
        let mut rows = Vec::new();
        let stem_taps: usize = self.stem_kernel.iter().product();
        rows.push(LedgerRow {
            name: "stem.conv".to_string(),
            trainable: (stem_taps * self.in_channels + 1) * self.stem_filters,
            non_trainable: 0,
        });
        rows.push(LedgerRow {
            name: "stem.bn".to_string(),
            trainable: 2 * self.stem_filters,
            non_trainable: 2 * self.stem_filters,
        });
        rows.push(LedgerRow::free("stem.relu"));
        if self.stem_pool.is_some() {
            rows.push(LedgerRow::free("stem.pool"));
        }
        let mut prev = self.stem_filters;
        for (i, stage) in self.stages.iter().enumerate() {
            for b in 0..stage.depth {
                let c_in = if b == 0 { prev } else { stage.width };
                for (part, trainable, non_trainable) in
                    block_param_rows(kind, self.rank, c_in, stage.width)
                {
                    rows.push(LedgerRow {
                        name: format!("stage{}.block{}.{part}", i + 1, b + 1),
                        trainable,
                        non_trainable,
                    });
                }
            }
            prev = stage.width;
            if stage.pool.is_some() {
                rows.push(LedgerRow::free(&format!("stage{}.pool", i + 1)));
            }
        }
        rows.push(LedgerRow::free("head.gap"));
        rows.push(LedgerRow {
            name: "head.dense".to_string(),
            trainable: (prev + 1) * self.n_classes,
            non_trainable: 0,
        });
        Ok(ParamLedger { rows })
    }
}

fn apply_pool(extent: &mut [usize], pool: &[usize], name: &str) -> Result<()> {
    for (axis, (e, &p)) in extent.iter_mut().zip(pool).enumerate() {
        if *e < p {
            return Err(Error::shape(format!(
                "{name}: window {p} exceeds spatial extent {} on axis {axis}",
                *e
            )));
        }
        *e /= p;
    }
    Ok(())
}

/// One accounting row: a layer's name and its parameter split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRow {
    pub name: String,
    pub trainable: usize,
    pub non_trainable: usize,
}

impl LedgerRow {
    fn free(name: &str) -> LedgerRow {
        LedgerRow {
            name: name.to_string(),
            trainable: 0,
            non_trainable: 0,
        }
    }
}

/// Per-layer parameter accounting with totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLedger {
    pub rows: Vec<LedgerRow>,
}

impl ParamLedger {
    pub fn trainable(&self) -> usize {
        self.rows.iter().map(|r| r.trainable).sum()
    }

    pub fn non_trainable(&self) -> usize {
        self.rows.iter().map(|r| r.non_trainable).sum()
    }

    pub fn total(&self) -> usize {
        self.trainable() + self.non_trainable()
    }

    /// `name,trainable,non_trainable` rows plus a trailing total row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,trainable,non_trainable\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.name, row.trainable, row.non_trainable));
        }
        out.push_str(&format!("total,{},{}\n", self.trainable(), self.non_trainable()));
        out
    }
}

/// Stem + residual stages + classifier head, with live weights.
#[derive(Debug, Clone)]
pub struct Network {
    plan: ArchPlan,
    kind: BlockKind,
    stem: Vec<LayerNode>,
    stages: Vec<Stage>,
    gap: GlobalAvgPool,
    head: DenseSoftmax,
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<ResBlock>,
    pool: Option<MaxPool>,
}

impl Network {
    /// Builds and initializes a network; parameter draws consume `rng` in a
    /// fixed order, so one seed pins every weight.
    pub fn build(plan: ArchPlan, kind: BlockKind, rng: &mut Rng) -> Result<Network> {
        plan.validate()?;
        let mut stem = vec![
            LayerNode::Conv(Conv::new(
                ConvSpec {
                    rank: plan.rank,
                    kernel: plan.stem_kernel.clone(),
                    stride: plan.stem_stride.clone(),
                    in_channels: plan.in_channels,
                    out_channels: plan.stem_filters,
                },
                rng,
            )?),
            LayerNode::BatchNorm(BatchNorm::new(BatchNormSpec::new(plan.stem_filters))?),
            LayerNode::Relu(Relu::new()),
        ];
        if let Some(pool) = &plan.stem_pool {
            stem.push(LayerNode::MaxPool(new_pool(plan.rank, pool)?));
        }
        let mut stages = Vec::with_capacity(plan.stages.len());
        let mut prev = plan.stem_filters;
        for stage in &plan.stages {
            let mut blocks = Vec::with_capacity(stage.depth);
            for b in 0..stage.depth {
                let c_in = if b == 0 { prev } else { stage.width };
                blocks.push(build_block(kind, plan.rank, c_in, stage.width, rng)?);
            }
            prev = stage.width;
            let pool = match &stage.pool {
                Some(p) => Some(new_pool(plan.rank, p)?),
                None => None,
            };
            stages.push(Stage { blocks, pool });
        }
        let head = DenseSoftmax::new(prev, plan.n_classes, rng)?;
        Ok(Network {
            plan,
            kind,
            stem,
            stages,
            gap: GlobalAvgPool::new(),
            head,
        })
    }

    pub fn plan(&self) -> &ArchPlan {
        &self.plan
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn n_classes(&self) -> usize {
        self.plan.n_classes
    }

    /// Class probabilities, `[batch, n_classes]`, rows summing to 1.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.stem {
            x = layer.forward(&x, mode)?;
        }
        for stage in &mut self.stages {
            for block in &mut stage.blocks {
                x = block.forward(&x, mode)?;
            }
            if let Some(pool) = &mut stage.pool {
                x = pool.forward(&x)?;
            }
        }
        let pooled = self.gap.forward(&x)?;
        self.head.forward(&pooled)
    }

    /// Mean cross-entropy of the last forward against `labels`.
    pub fn loss(&self, labels: &[usize]) -> Result<f64> {
        self.head.loss(labels)
    }

    /// Backpropagates the fused softmax/cross-entropy loss; gradients land
    /// in every layer's buffers and the input gradient is returned.
    pub fn backward(&mut self, labels: &[usize]) -> Result<Tensor> {
        let mut g = self.head.backward(labels)?;
        g = self.gap.backward(&g)?;
        for stage in self.stages.iter_mut().rev() {
            if let Some(pool) = &mut stage.pool {
                g = pool.backward(&g)?;
            }
            for block in stage.blocks.iter_mut().rev() {
                g = block.backward(&g)?;
            }
        }
        for layer in self.stem.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Argmax class per batch row, ties to the lowest class index.
    pub fn predict(&mut self, input: &Tensor) -> Result<Vec<usize>> {
        let probs = self.forward(input, Mode::Infer)?;
        let n = self.plan.n_classes;
        Ok(probs
            .data()
            .chunks_exact(n)
            .map(|row| {
                let mut best = 0usize;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor, &mut Tensor)) {
        for layer in &mut self.stem {
            layer.visit_params(f);
        }
        for stage in &mut self.stages {
            for block in &mut stage.blocks {
                block.visit_params(f);
            }
        }
        self.head.visit_params(f);
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in &mut self.stem {
            layer.visit_state(f);
        }
        for stage in &mut self.stages {
            for block in &mut stage.blocks {
                block.visit_state(f);
            }
        }
    }

    /// Every persisted tensor in checkpoint order.
    pub fn visit_tensors(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in &mut self.stem {
            layer.visit_tensors(f);
        }
        for stage in &mut self.stages {
            for block in &mut stage.blocks {
                block.visit_tensors(f);
            }
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    /// The plan-arithmetic ledger for this network's kind.
    pub fn ledger(&self) -> ParamLedger {
        self.plan
            .ledger(self.kind)
            .expect("a built network always has a valid plan")
    }

    /// (trainable, non_trainable) by walking the live tensors.
    pub fn live_param_count(&mut self) -> (usize, usize) {
        let mut trainable = 0usize;
        self.visit_params(&mut |_, value, _| trainable += value.len());
        let mut non_trainable = 0usize;
        self.visit_state(&mut |state| non_trainable += state.len());
        (trainable, non_trainable)
    }

    /// Zeroes every gradient buffer.
    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, _, grad| grad.fill(0.0));
    }
}

fn new_pool(rank: Rank, size: &[usize]) -> Result<MaxPool> {
    match rank {
        Rank::One => MaxPool::rank1(size[0]),
        Rank::Two => MaxPool::rank2((size[0], size[1])),
    }
}

/// A four-stage miniature of the 1D network used by gradient-certification
/// tests: same layer types and wiring, widths 4/8/16/32, single blocks,
/// pooling only while the extent allows it.
pub fn tiny1d_plan(input_length: usize, n_classes: usize) -> ArchPlan {
    ArchPlan {
        rank: Rank::One,
        input_extent: vec![input_length],
        in_channels: 1,
        stem_filters: 4,
        stem_kernel: vec![80],
        stem_stride: vec![4],
        stem_pool: Some(vec![4]),
        stages: vec![
            StagePlan { width: 4, depth: 1, pool: Some(vec![4]) },
            StagePlan { width: 8, depth: 1, pool: Some(vec![4]) },
            StagePlan { width: 16, depth: 1, pool: None },
            StagePlan { width: 32, depth: 1, pool: None },
        ],
        n_classes,
    }
}

/// A 2D miniature whose pools all fit, for exercising the rank-2 path end
/// to end (the published 2D plan's fourth pool cannot fit; see
/// [`ArchPlan::slim2d`]).
pub fn tiny2d_plan(input_extent: (usize, usize), n_classes: usize) -> ArchPlan {
    ArchPlan {
        rank: Rank::Two,
        input_extent: vec![input_extent.0, input_extent.1],
        in_channels: 1,
        stem_filters: 4,
        stem_kernel: vec![1, 8],
        stem_stride: vec![1, 2],
        stem_pool: Some(vec![1, 2]),
        stages: vec![
            StagePlan { width: 4, depth: 1, pool: Some(vec![2, 2]) },
            StagePlan { width: 8, depth: 1, pool: Some(vec![2, 2]) },
        ],
        n_classes,
    }
}
