use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{MasaError, Result};
use crate::types::MIN_PREDICTED_LENGTH;

/// Number of values represented by one fine length token.
pub const LENGTH_FINE: usize = 64;
pub const PASS_CHOICES: usize = 9;

/// Segment sizes and offsets of the flat parameter vector.
///
/// Per context bucket: pass-rate logits, coarse and fine length logits,
/// notion-emission logits (shared by meta and solution heads), and a
/// solution-only plan adjustment. Global: notion-to-strategy links and a
/// strategy bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub contexts: usize,
    pub notions: usize,
    pub strategies: usize,
    pub length_coarse: usize,
}

impl ParamLayout {
    pub fn new(contexts: usize, notions: usize, strategies: usize, max_response_tokens: u32) -> Self {
        let span = max_response_tokens.saturating_sub(MIN_PREDICTED_LENGTH) as usize;
        Self {
            contexts,
            notions,
            strategies,
            length_coarse: span / LENGTH_FINE + 1,
        }
    }

    /// Width of notion decisions: every notion plus the end-of-list choice.
    pub fn notion_width(&self) -> usize {
        self.notions + 1
    }

    fn per_context(&self) -> usize {
        PASS_CHOICES + self.length_coarse + LENGTH_FINE + 2 * self.notion_width()
    }

    pub fn pass_row(&self, ctx: usize) -> usize {
        ctx * self.per_context()
    }

    pub fn coarse_row(&self, ctx: usize) -> usize {
        self.pass_row(ctx) + PASS_CHOICES
    }

    pub fn fine_row(&self, ctx: usize) -> usize {
        self.coarse_row(ctx) + self.length_coarse
    }

    pub fn notion_row(&self, ctx: usize) -> usize {
        self.fine_row(ctx) + LENGTH_FINE
    }

    pub fn plan_row(&self, ctx: usize) -> usize {
        self.notion_row(ctx) + self.notion_width()
    }

    pub fn link_row(&self, notion: usize) -> usize {
        self.contexts * self.per_context() + notion * self.strategies
    }

    pub fn strategy_bias_row(&self) -> usize {
        self.link_row(self.notions)
    }

    pub fn len(&self) -> usize {
        self.strategy_bias_row() + self.strategies
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Named segments, for inspection and checkpoints.
    pub fn segments(&self) -> Vec<(&'static str, Range<usize>)> {
        let c = self.contexts;
        let ctx_end = c * self.per_context();
        vec![
            ("context_heads", 0..ctx_end),
            ("notion_links", ctx_end..self.strategy_bias_row()),
            ("strategy_bias", self.strategy_bias_row()..self.len()),
        ]
    }
}

/// The flat parameter vector theta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layout: ParamLayout,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            theta: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_vec(layout: ParamLayout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.len() {
            return Err(MasaError::Shape {
                expected: layout.len(),
                got: theta.len(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(MasaError::Precondition(format!("parameter {i} is not finite")));
        }
        Ok(Self { layout, theta })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}
