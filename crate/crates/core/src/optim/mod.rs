//! Gradient engine and first-order optimization over named variable blocks.

pub mod adam;
pub mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use tape::{value_and_grad, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Per-frame global orientation, 6 values per frame.
    Orient,
    /// Per-frame translation, 3 values per frame.
    Transl,
    /// Sequence-level shape coefficients.
    Shape,
    /// Motion-prior latent code(s).
    Latent,
    /// Per-frame local pose, 15 × 6 values per frame.
    Pose,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Orient => "orient",
            BlockKind::Transl => "transl",
            BlockKind::Shape => "shape",
            BlockKind::Latent => "latent",
            BlockKind::Pose => "pose",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub values: Vec<f64>,
    pub frozen: bool,
}

/// Heterogeneous set of optimization variables. Block shapes are fixed once
/// created.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VariableSet {
    blocks: Vec<Block>,
}

impl VariableSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: BlockKind, values: Vec<f64>) -> Self {
        self.insert(kind, values);
        self
    }

    /// Add a block, replacing any previous block of the same kind.
    pub fn insert(&mut self, kind: BlockKind, values: Vec<f64>) {
        if let Some(b) = self.blocks.iter_mut().find(|b| b.kind == kind) {
            b.values = values;
        } else {
            self.blocks.push(Block {
                kind,
                values,
                frozen: false,
            });
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn index_of(&self, kind: BlockKind) -> Option<usize> {
        self.blocks.iter().position(|b| b.kind == kind)
    }

    pub fn get(&self, kind: BlockKind) -> Option<&[f64]> {
        self.blocks
            .iter()
            .find(|b| b.kind == kind)
            .map(|b| b.values.as_slice())
    }

    pub fn get_mut(&mut self, kind: BlockKind) -> Option<&mut Vec<f64>> {
        self.blocks
            .iter_mut()
            .find(|b| b.kind == kind)
            .map(|b| &mut b.values)
    }

    pub fn set_frozen(&mut self, kind: BlockKind, frozen: bool) {
        if let Some(b) = self.blocks.iter_mut().find(|b| b.kind == kind) {
            b.frozen = frozen;
        }
    }

    pub fn is_frozen(&self, kind: BlockKind) -> bool {
        self.blocks
            .iter()
            .find(|b| b.kind == kind)
            .is_some_and(|b| b.frozen)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.values.len()).collect()
    }
}

/// Gradient per block, in the same order as [`VariableSet::blocks`].
pub type BlockGradients = Vec<Vec<f64>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub total: f64,
    /// Named weighted contributions; they sum to `total`.
    pub terms: Vec<(String, f64)>,
    #[serde(skip)]
    pub grads: BlockGradients,
}

/// A differentiable scalar objective over a [`VariableSet`].
pub trait Objective {
    fn evaluate(&self, vars: &VariableSet) -> Result<Evaluation>;
}

/// Objective written directly against tape variables, one slice per block.
pub struct TapeObjective<F>(F);

impl<F> TapeObjective<F>
where
    F: for<'t> Fn(&[Vec<Var<'t>>]) -> Var<'t>,
{
    pub fn new(f: F) -> Self {
        TapeObjective(f)
    }
}

impl<F> Objective for TapeObjective<F>
where
    F: for<'t> Fn(&[Vec<Var<'t>>]) -> Var<'t>,
{
    fn evaluate(&self, vars: &VariableSet) -> Result<Evaluation> {
        let tape = Tape::new();
        let leaves: Vec<Vec<Var<'_>>> =
            vars.blocks().iter().map(|b| tape.vars(&b.values)).collect();
        let out = (self.0)(&leaves);
        let g = tape.gradient(out);
        Ok(Evaluation {
            total: out.val(),
            terms: vec![("objective".into(), out.val())],
            grads: leaves.iter().map(|l| g.wrt_all(l)).collect(),
        })
    }
}

/// Gradients of every unfrozen block; frozen blocks get zeros.
pub fn gradient(objective: &dyn Objective, vars: &VariableSet) -> Result<BlockGradients> {
    let eval = objective.evaluate(vars)?;
    checked_grads(vars, eval.grads)
}

fn checked_grads(vars: &VariableSet, mut grads: BlockGradients) -> Result<BlockGradients> {
    if grads.len() != vars.blocks().len() {
        return Err(Error::ShapeMismatch(format!(
            "objective returned {} gradient blocks for {} variable blocks",
            grads.len(),
            vars.blocks().len()
        )));
    }
    for (b, g) in vars.blocks().iter().zip(grads.iter_mut()) {
        if g.len() != b.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for {} has {} entries, expected {}",
                b.kind.name(),
                g.len(),
                b.values.len()
            )));
        }
        if b.frozen {
            g.iter_mut().for_each(|x| *x = 0.0);
        } else if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(b.kind.name().into()));
        }
    }
    Ok(grads)
}

/// One Adam update over all unfrozen blocks.
pub fn adam_step(state: &mut Adam, vars: &mut VariableSet, grads: &[Vec<f64>]) -> Result<()> {
    if grads.len() != vars.blocks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient blocks for {} variable blocks",
            grads.len(),
            vars.blocks.len()
        )));
    }
    state.begin_step();
    for (i, (b, g)) in vars.blocks.iter_mut().zip(grads).enumerate() {
        if !b.frozen {
            state.apply(i, &mut b.values, g)?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    pub iters: usize,
    pub adam: AdamConfig,
    /// Stop when the relative loss change over `patience` iterations drops
    /// below this.
    pub rel_tol: f64,
    pub patience: usize,
    pub block_lr: BlockLrScale,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            iters: 300,
            adam: AdamConfig::default(),
            rel_tol: 1e-6,
            patience: 20,
            block_lr: BlockLrScale::default(),
        }
    }
}

/// Per-block multipliers of the base learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockLrScale {
    pub orient: f64,
    pub transl: f64,
    pub shape: f64,
    pub latent: f64,
    pub pose: f64,
}

impl Default for BlockLrScale {
    fn default() -> Self {
        BlockLrScale {
            orient: 1.0,
            transl: 1.0,
            shape: 1.0,
            latent: 1.0,
            pose: 1.0,
        }
    }
}

impl BlockLrScale {
    pub fn get(&self, kind: BlockKind) -> f64 {
        match kind {
            BlockKind::Orient => self.orient,
            BlockKind::Transl => self.transl,
            BlockKind::Shape => self.shape,
            BlockKind::Latent => self.latent,
            BlockKind::Pose => self.pose,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub totals: Vec<f64>,
    pub terms: Vec<Vec<(String, f64)>>,
    pub converged_early: bool,
}

/// Run Adam for up to `opts.iters` iterations. The trace records the loss of
/// the iterate at which each gradient was taken.
pub fn minimize(
    objective: &dyn Objective,
    vars: &mut VariableSet,
    opts: &MinimizeOptions,
    mut callback: impl FnMut(usize, &Evaluation),
) -> Result<LossTrace> {
    let mut adam = Adam::new(opts.adam, &vars.sizes());
    for (i, b) in vars.blocks.iter().enumerate() {
        adam.set_block_scale(i, opts.block_lr.get(b.kind));
    }
    let mut trace = LossTrace::default();
    for it in 0..opts.iters {
        let eval = objective.evaluate(vars)?;
        if !eval.total.is_finite() {
            let culprit = eval
                .terms
                .iter()
                .find(|(_, v)| !v.is_finite())
                .map(|(n, _)| n.clone())
                .unwrap_or_else(|| "total".into());
            return Err(Error::NonFiniteObjective(culprit));
        }
        callback(it, &eval);
        trace.totals.push(eval.total);
        trace.terms.push(eval.terms.clone());
        let grads = checked_grads(vars, eval.grads)?;
        adam_step(&mut adam, vars, &grads)?;

        if opts.patience > 0 && it >= opts.patience {
            let old = trace.totals[it - opts.patience];
            let rel = (old - eval.total).abs() / old.abs().max(1e-12);
            if rel < opts.rel_tol {
                trace.converged_early = true;
                break;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> TapeObjective<impl for<'t> Fn(&[Vec<Var<'t>>]) -> Var<'t>> {
        TapeObjective::new(|b| {
            let mut acc = Var::constant(0.0);
            for (i, x) in b[0].iter().enumerate() {
                acc += (*x - i as f64).square();
            }
            acc
        })
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let vars = VariableSet::new()
            .with(BlockKind::Transl, vec![0.3, -1.2, 4.0])
            .with(BlockKind::Shape, vec![1.0, 2.0]);
        let obj = TapeObjective::new(|b| b[0].iter().fold(Var::constant(0.0), |a, x| a + *x * *x));
        let g = gradient(&obj, &vars).unwrap();
        assert_eq!(g[0], vec![0.6, -2.4, 8.0]);
        assert_eq!(g[1], vec![0.0, 0.0]);
    }

    #[test]
    fn block_scale_multiplies_the_first_step() {
        let obj = TapeObjective::new(|b| {
            let mut acc = Var::constant(0.0);
            for blk in b {
                for x in blk {
                    acc += x.square();
                }
            }
            acc
        });
        let mut vars = VariableSet::new()
            .with(BlockKind::Orient, vec![1.0])
            .with(BlockKind::Transl, vec![1.0]);
        let opts = MinimizeOptions {
            iters: 1,
            block_lr: BlockLrScale {
                transl: 0.01,
                ..BlockLrScale::default()
            },
            ..Default::default()
        };
        minimize(&obj, &mut vars, &opts, |_, _| {}).unwrap();
        let lr = opts.adam.lr;
        assert!((vars.get(BlockKind::Orient).unwrap()[0] - (1.0 - lr)).abs() < 1e-9);
        assert!((vars.get(BlockKind::Transl).unwrap()[0] - (1.0 - 0.01 * lr)).abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_is_a_no_op() {
        let mut vars = VariableSet::new().with(BlockKind::Latent, vec![5.0, 5.0]);
        let before = vars.clone();
        let opts = MinimizeOptions {
            iters: 0,
            ..Default::default()
        };
        let trace = minimize(&quad(), &mut vars, &opts, |_, _| {}).unwrap();
        assert_eq!(vars, before);
        assert!(trace.totals.is_empty());
    }

    #[test]
    fn convex_trace_decreases_after_burn_in() {
        let mut vars = VariableSet::new().with(BlockKind::Latent, vec![3.0, -2.0, 0.5, 8.0]);
        let opts = MinimizeOptions {
            iters: 400,
            patience: 0,
            ..Default::default()
        };
        let trace = minimize(&quad(), &mut vars, &opts, |_, _| {}).unwrap();
        let t = &trace.totals;
        // Adam overshoots before settling; compare windows after a short transient.
        for w in t[10..].windows(10).step_by(10) {
            assert!(w[9] <= w[0] + 1e-9, "{:?}", w);
        }
        assert!(t.last().unwrap() < &1e-3);
    }

    #[test]
    fn frozen_blocks_stay_bitwise_identical() {
        let mut vars = VariableSet::new()
            .with(BlockKind::Latent, vec![3.0, -2.0])
            .with(BlockKind::Shape, vec![0.123456789, 1.0 / 3.0]);
        vars.set_frozen(BlockKind::Shape, true);
        let obj = TapeObjective::new(|b| {
            let mut acc = Var::constant(0.0);
            for x in b.iter().flatten() {
                acc += x.square();
            }
            acc
        });
        let frozen_before = vars.get(BlockKind::Shape).unwrap().to_vec();
        let opts = MinimizeOptions {
            iters: 50,
            ..Default::default()
        };
        minimize(&obj, &mut vars, &opts, |_, _| {}).unwrap();
        assert_eq!(
            vars.get(BlockKind::Shape).unwrap(),
            frozen_before.as_slice()
        );
        assert_ne!(vars.get(BlockKind::Latent).unwrap(), &[3.0, -2.0]);
    }

    #[test]
    fn minimize_is_deterministic() {
        let run = || {
            let mut vars = VariableSet::new().with(BlockKind::Latent, vec![1.0, 2.0, 3.0]);
            let opts = MinimizeOptions {
                iters: 60,
                ..Default::default()
            };
            let t = minimize(&quad(), &mut vars, &opts, |_, _| {}).unwrap();
            (t.totals, vars)
        };
        let (a, va) = run();
        let (b, vb) = run();
        assert_eq!(a, b);
        assert_eq!(va, vb);
    }

    #[test]
    fn non_finite_objective_names_the_term() {
        struct Bad;
        impl Objective for Bad {
            fn evaluate(&self, vars: &VariableSet) -> Result<Evaluation> {
                Ok(Evaluation {
                    total: f64::NAN,
                    terms: vec![("fine".into(), 1.0), ("broken".into(), f64::NAN)],
                    grads: vec![vec![0.0; vars.blocks()[0].values.len()]],
                })
            }
        }
        let mut vars = VariableSet::new().with(BlockKind::Latent, vec![0.0]);
        let err = minimize(&Bad, &mut vars, &MinimizeOptions::default(), |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteObjective(ref n) if n == "broken"));
    }
}
