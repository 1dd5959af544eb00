use std::collections::BTreeMap;

use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCount {
    /// Element count per named tensor, in traversal order.
    pub tensors: Vec<(String, usize)>,
    /// Counts grouped by module (`embed`, `level1.li`, `level1.no`, ...).
    pub modules: BTreeMap<String, usize>,
    pub total: usize,
}

/// Module of a tensor name: everything before the last component.
fn module_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let depth = if parts[0] == "embed" { 1 } else { 2 };
    parts[..depth.min(parts.len() - 1)].join(".")
}

pub fn param_count(params: &ModelParams<Tensor>) -> ParamCount {
    let tensors: Vec<(String, usize)> = params.named().into_iter().map(|(n, t)| (n, t.numel())).collect();
    let mut modules = BTreeMap::new();
    for (name, n) in &tensors {
        *modules.entry(module_of(name)).or_insert(0) += n;
    }
    ParamCount {
        total: tensors.iter().map(|(_, n)| n).sum(),
        tensors,
        modules,
    }
}
