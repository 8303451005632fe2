use crate::data::{ColumnKind, TabularDataset, CLASS_NAMES};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyEdge {
    /// Index of the source stage; the target is `stage + 1`.
    pub stage: usize,
    pub from: usize,
    pub to: usize,
    pub count: usize,
}

/// Transition counts between adjacent categorical stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyFlows {
    pub stages: Vec<String>,
    /// Node labels per stage.
    pub nodes: Vec<Vec<String>>,
    /// Non-zero edges ordered by stage, source and target.
    pub edges: Vec<SankeyEdge>,
}

impl SankeyFlows {
    fn flow(&self, stage: usize, node: usize, outgoing: bool) -> usize {
        self.edges
            .iter()
            .filter(|e| {
                if outgoing {
                    e.stage == stage && e.from == node
                } else {
                    e.stage + 1 == stage && e.to == node
                }
            })
            .map(|e| e.count)
            .sum()
    }

    /// Count of rows through each node: outflow for the first stage, inflow
    /// for the others.
    pub fn node_totals(&self, stage: usize) -> Vec<usize> {
        (0..self.nodes[stage].len())
            .map(|n| self.flow(stage, n, stage == 0))
            .collect()
    }

    pub fn stage_total(&self, stage: usize) -> usize {
        self.node_totals(stage).iter().sum()
    }

    /// Inflow equals outflow at every node of every interior stage.
    pub fn is_conserved(&self) -> bool {
        (1..self.stages.len().saturating_sub(1)).all(|s| {
            (0..self.nodes[s].len()).all(|n| self.flow(s, n, false) == self.flow(s, n, true))
        })
    }
}

/// Counts every adjacent pair of stage values over the rows of `ds`. The
/// label column may be used as a stage.
pub fn sankey_flows(ds: &TabularDataset, stage_columns: &[String]) -> Result<SankeyFlows> {
    if stage_columns.len() < 2 {
        return Err(Error::contract("a flow diagram needs at least two stages"));
    }
    let schema = ds.schema();
    let cat_names: Vec<&str> = schema.categorical().map(|c| c.name.as_str()).collect();
    let mut values: Vec<Vec<usize>> = Vec::with_capacity(stage_columns.len());
    let mut nodes = Vec::with_capacity(stage_columns.len());
    for name in stage_columns {
        let spec = schema
            .column(name)
            .ok_or_else(|| Error::contract(format!("unknown stage column {name:?}")))?;
        match spec.kind {
            ColumnKind::Categorical => {
                let j = cat_names.iter().position(|c| c == name).expect("categorical column");
                values.push(ds.categorical_column(j).collect());
                nodes.push(spec.vocab.clone());
            }
            ColumnKind::Label => {
                values.push(ds.labels().to_vec());
                nodes.push(CLASS_NAMES.iter().map(|s| s.to_string()).collect());
            }
            ColumnKind::Continuous => {
                return Err(Error::contract(format!("stage column {name:?} is not categorical")));
            }
        }
    }
    let mut edges = Vec::new();
    for s in 0..stage_columns.len() - 1 {
        let (a, b) = (nodes[s].len(), nodes[s + 1].len());
        let mut counts = vec![0usize; a * b];
        for (&x, &y) in values[s].iter().zip(&values[s + 1]) {
            counts[x * b + y] += 1;
        }
        for (k, &count) in counts.iter().enumerate() {
            if count > 0 {
                edges.push(SankeyEdge {
                    stage: s,
                    from: k / b,
                    to: k % b,
                    count,
                });
            }
        }
    }
    Ok(SankeyFlows {
        stages: stage_columns.to_vec(),
        nodes,
        edges,
    })
}
