use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a trainable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        Self(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable tensor. Cloning yields an independent parameter with a new id,
/// so a cloned network (e.g. a target copy) never aliases optimizer state or
/// gradients of the original.
#[derive(Debug)]
pub struct Param {
    id: ParamId,
    pub value: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self {
            id: ParamId::fresh(),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }
}

impl Clone for Param {
    fn clone(&self) -> Self {
        Self::new(self.value.clone())
    }
}

/// Anything that owns parameters, visited in a stable order.
pub trait Module {
    fn named_params(&self) -> Vec<(String, &Param)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}

/// Prefixes child parameter names with `prefix.`.
pub fn scoped<'a>(prefix: &str, inner: Vec<(String, &'a Param)>) -> Vec<(String, &'a Param)> {
    inner
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}

pub fn scoped_mut<'a>(
    prefix: &str,
    inner: Vec<(String, &'a mut Param)>,
) -> Vec<(String, &'a mut Param)> {
    inner
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}
