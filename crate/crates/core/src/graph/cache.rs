//! Kernel cache.
//!
//! Compiling a graph (optimization passes, liveness planning, arena
//! allocation) is much more expensive than one execution, so kernels are
//! cached by graph identity, input-shape signature, and mode. Precision is
//! fixed by the cache's scalar type. Training loops hit the cache every
//! iteration and compile only when a new graph or batch shape appears.

use std::collections::HashMap;

use super::kernel::{compile, Kernel, KernelMode};
use super::ExprGraph;
use crate::error::{Result, Shape};
use crate::precision::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    graph_id: u64,
    shapes: Vec<Shape>,
    mode: KernelMode,
}

/// Compiled-kernel store for one precision.
pub struct KernelCache<S: Scalar> {
    map: HashMap<CacheKey, Kernel<S>>,
    hits: u64,
    misses: u64,
}

impl<S: Scalar> Default for KernelCache<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> KernelCache<S> {
    pub fn new() -> Self {
        KernelCache {
            map: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    /// Returns the kernel for `graph` under `mode`, compiling on first use.
    pub fn kernel(&mut self, graph: &ExprGraph, mode: KernelMode) -> Result<&mut Kernel<S>> {
        let key = CacheKey {
            graph_id: graph.graph_id(),
            shapes: graph.input_shapes(),
            mode,
        };
        if !self.map.contains_key(&key) {
            self.misses += 1;
            let kernel = compile::<S>(graph, mode)?;
            self.map.insert(key.clone(), kernel);
        } else {
            self.hits += 1;
        }
        Ok(self.map.get_mut(&key).expect("just inserted"))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }
}
