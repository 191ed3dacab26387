//! The piecewise-linear quantile map from a target profile onto a source
//! profile.
//!
//! Inside `[p_1^T, p_{K-1}^T)` a value in segment `[p_j^T, p_{j+1}^T)` is sent
//! to `p_j^S + (x - p_j^T) / Δ_j^T · Δ_j^S`. The two extreme segments and
//! everything outside the target range go through the [`TailRule`].

use crate::error::Result;
use crate::quantile::QuantileProfile;
use crate::tails::{map_tail, segment_line, TailContext, TailRule};
use crate::Scalar;

/// A validated (target, source, rule) triple, ready to map many values.
#[derive(Debug, Clone)]
pub struct QuantileMap<'a, T> {
    target: &'a [T],
    source: &'a [T],
    rule: TailRule<T>,
    ctx: TailContext<T>,
}

impl<'a, T: Scalar> QuantileMap<'a, T> {
    pub fn new(
        target: &'a QuantileProfile<T>,
        source: &'a QuantileProfile<T>,
        rule: TailRule<T>,
    ) -> Result<Self> {
        let ctx = TailContext::from_profiles(target, source)?;
        // Surface rule/context problems once, up front.
        crate::tails::apply_tail_rule(ctx.target.min, &rule, &ctx)?;
        Ok(Self {
            target: target.knots(),
            source: source.knots(),
            rule,
            ctx,
        })
    }

    pub fn rule(&self) -> &TailRule<T> {
        &self.rule
    }

    pub fn apply(&self, x: T) -> T {
        let (t, s) = (self.target, self.source);
        let k = t.len() - 1;
        if k >= 2 && x >= t[1] && x < t[k - 1] {
            // rightmost j with t[j] <= x; lands in 1..=k-2
            let j = t.partition_point(|p| *p <= x) - 1;
            return segment_line(x, t[j], t[j + 1], s[j], s[j + 1]);
        }
        map_tail(x, self.ctx.side(x), &self.rule, &self.ctx)
    }

    pub fn apply_slice(&self, values: &mut [T]) {
        for v in values {
            *v = self.apply(*v);
        }
    }
}

/// Maps one value from the target distribution onto the source distribution.
pub fn piecewise_transform<T: Scalar>(
    x: T,
    target: &QuantileProfile<T>,
    source: &QuantileProfile<T>,
    tail: &TailRule<T>,
) -> Result<T> {
    Ok(QuantileMap::new(target, source, tail.clone())?.apply(x))
}

/// Elementwise [`piecewise_transform`].
pub fn batch_transform<T: Scalar>(
    values: &[T],
    target: &QuantileProfile<T>,
    source: &QuantileProfile<T>,
    tail: &TailRule<T>,
) -> Result<Vec<T>> {
    let map = QuantileMap::new(target, source, tail.clone())?;
    Ok(values.iter().map(|&v| map.apply(v)).collect())
}
