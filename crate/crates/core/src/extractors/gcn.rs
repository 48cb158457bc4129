use std::cmp::Reverse;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ExtractorParams, FeatureMap, Recording};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, GraphFile, PropagationOperator};

/// Which node rows survive after the last graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsamplePolicy {
    /// Parents of the target first, then deeper nodes (longest path from a
    /// root), then nodes with more ancestors, then declaration order.
    #[default]
    CausalPriority,
    /// The first `subsample_count` input nodes.
    DeclarationOrder,
}

/// Stacked graph convolutions over the input variables of a causal graph.
///
/// Each node starts from its own `window`-length history. `graph` may
/// include the target; it is used to rank nodes for subsampling and is then
/// dropped, so convolutions only run over input variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnSpec {
    pub window: usize,
    pub widths: Vec<usize>,
    pub subsample_count: usize,
    #[serde(default)]
    pub subsample_policy: SubsamplePolicy,
    #[serde(default = "default_true")]
    pub symmetrize: bool,
    pub graph: GraphFile,
}

fn default_true() -> bool {
    true
}

impl GcnSpec {
    /// Widths 32-16-8-4 and three subsampled nodes.
    pub fn standard(graph: &CausalGraph, window: usize) -> Self {
        Self {
            window,
            widths: vec![32, 16, 8, 4],
            subsample_count: 3,
            subsample_policy: SubsamplePolicy::CausalPriority,
            symmetrize: true,
            graph: graph.to_file(),
        }
    }
}

/// Ranks the non-target nodes of `graph` and returns the first `count`
/// as indices into the input-restricted node order.
pub fn select_nodes(graph: &CausalGraph, count: usize, policy: SubsamplePolicy) -> Vec<usize> {
    let target = graph.target();
    let inputs: Vec<usize> = (0..graph.node_count()).filter(|&i| Some(i) != target).collect();
    let restricted_index = |i: usize| match target {
        Some(t) if i > t => i - 1,
        _ => i,
    };
    let mut ranked = inputs.clone();
    if policy == SubsamplePolicy::CausalPriority {
        let parents = target.map(|t| graph.parents(t)).unwrap_or_default();
        let depth = graph.depths();
        ranked.sort_by_key(|&i| {
            (
                !parents.contains(&i),
                Reverse(depth[i]),
                Reverse(graph.ancestor_count(i)),
                i,
            )
        });
    }
    ranked.into_iter().take(count).map(restricted_index).collect()
}

#[derive(Debug, Clone)]
pub struct GcnNet {
    spec: GcnSpec,
    inputs: CausalGraph,
    operator: PropagationOperator,
    selected: Vec<usize>,
}

impl GcnNet {
    pub fn new(spec: GcnSpec) -> Result<Self> {
        let graph = CausalGraph::from_file(&spec.graph)?;
        let inputs = match graph.target() {
            Some(_) => graph.restrict_to_inputs()?,
            None => graph.clone(),
        };
        let n = inputs.node_count();
        if n == 0 {
            return Err(Error::InvalidSpec("GCN graph has no input nodes".into()));
        }
        if spec.window == 0 || spec.widths.is_empty() || spec.widths.contains(&0) {
            return Err(Error::InvalidSpec("GCN widths must be positive".into()));
        }
        if spec.subsample_count == 0 || spec.subsample_count > n {
            return Err(Error::InvalidSpec(format!(
                "subsample count {} must be in 1..={n}",
                spec.subsample_count
            )));
        }
        let selected = select_nodes(&graph, spec.subsample_count, spec.subsample_policy);
        let operator = inputs.propagation_operator(spec.symmetrize);
        Ok(Self {
            spec,
            inputs,
            operator,
            selected,
        })
    }

    pub fn spec(&self) -> &GcnSpec {
        &self.spec
    }

    /// Input variables in row order of the expected window.
    pub fn input_names(&self) -> &[String] {
        self.inputs.node_names()
    }

    pub fn input_graph(&self) -> &CausalGraph {
        &self.inputs
    }

    pub fn operator(&self) -> &PropagationOperator {
        &self.operator
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.selected
            .iter()
            .map(|&i| self.inputs.node_names()[i].clone())
            .collect()
    }

    fn nodes(&self) -> usize {
        self.inputs.node_count()
    }

    /// `S · H` for row-major `H` with `f` columns.
    fn propagate(&self, h: &[f64], f: usize, transpose: bool) -> Vec<f64> {
        let n = self.nodes();
        let s = &self.operator.matrix;
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..n {
                let sij = if transpose { s[(j, i)] } else { s[(i, j)] };
                if sij == 0.0 {
                    continue;
                }
                let src = &h[j * f..(j + 1) * f];
                for (o, v) in out[i * f..(i + 1) * f].iter_mut().zip(src) {
                    *o += sij * v;
                }
            }
        }
        out
    }
}

impl FeatureMap for GcnNet {
    fn input_len(&self) -> usize {
        self.nodes() * self.spec.window
    }

    fn latent_dim(&self) -> usize {
        self.spec.subsample_count * self.spec.widths.last().expect("validated")
    }

    fn param_shapes(&self) -> Vec<(String, usize, usize, bool)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.spec.window;
        for (l, &w) in self.spec.widths.iter().enumerate() {
            shapes.push((format!("gcn{l}.weight"), fan_in, w, false));
            shapes.push((format!("gcn{l}.bias"), 1, w, true));
            fan_in = w;
        }
        shapes
    }

    fn forward(
        &self,
        params: &ExtractorParams,
        input: &[f64],
        mut rec: Option<&mut Recording>,
    ) -> Result<Vec<f64>> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "GCN expects {} nodes x {} steps, got {} values",
                self.nodes(),
                self.spec.window,
                input.len()
            )));
        }
        if let Some(r) = rec.as_deref_mut() {
            r.reset();
        }
        let n = self.nodes();
        let layers = self.spec.widths.len();
        let mut h = input.to_vec();
        let mut f_in = self.spec.window;
        for l in 0..layers {
            let w = &params.blocks[2 * l];
            let b = &params.blocks[2 * l + 1];
            let f_out = w.cols;
            let p = self.propagate(&h, f_in, false);
            let mut z = vec![0.0; n * f_out];
            for i in 0..n {
                let zi = &mut z[i * f_out..(i + 1) * f_out];
                zi.copy_from_slice(&b.data);
                for (a, &pa) in p[i * f_in..(i + 1) * f_in].iter().enumerate() {
                    for (zk, wk) in zi.iter_mut().zip(&w.data[a * f_out..(a + 1) * f_out]) {
                        *zk += pa * wk;
                    }
                }
            }
            h = if l + 1 < layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            if let Some(r) = rec.as_deref_mut() {
                r.tape.push(p);
                r.tape.push(z);
            }
            f_in = f_out;
        }
        let mut out = Vec::with_capacity(self.latent_dim());
        for &node in &self.selected {
            out.extend_from_slice(&h[node * f_in..(node + 1) * f_in]);
        }
        Ok(out)
    }

    fn backward(
        &self,
        params: &ExtractorParams,
        rec: &Recording,
        upstream: &[f64],
        grads: &mut ExtractorParams,
    ) -> Result<Vec<f64>> {
        rec.require()?;
        let layers = self.spec.widths.len();
        if upstream.len() != self.latent_dim() || rec.tape.len() != 2 * layers {
            return Err(Error::Shape("GCN backward: upstream or tape size".into()));
        }
        let n = self.nodes();
        let last = *self.spec.widths.last().expect("validated");
        let mut g = vec![0.0; n * last];
        for (r, &node) in self.selected.iter().enumerate() {
            for k in 0..last {
                g[node * last + k] += upstream[r * last + k];
            }
        }
        for l in (0..layers).rev() {
            let p = &rec.tape[2 * l];
            let z = &rec.tape[2 * l + 1];
            let w = &params.blocks[2 * l];
            let (f_in, f_out) = (w.rows, w.cols);
            if l + 1 < layers {
                for (gk, &zk) in g.iter_mut().zip(z) {
                    if zk <= 0.0 {
                        *gk = 0.0;
                    }
                }
            }
            {
                let gw = &mut grads.blocks[2 * l].data;
                for i in 0..n {
                    let gi = &g[i * f_out..(i + 1) * f_out];
                    for a in 0..f_in {
                        let pa = p[i * f_in + a];
                        if pa == 0.0 {
                            continue;
                        }
                        for (d, gk) in gw[a * f_out..(a + 1) * f_out].iter_mut().zip(gi) {
                            *d += pa * gk;
                        }
                    }
                }
            }
            {
                let gb = &mut grads.blocks[2 * l + 1].data;
                for i in 0..n {
                    for (d, gk) in gb.iter_mut().zip(&g[i * f_out..(i + 1) * f_out]) {
                        *d += gk;
                    }
                }
            }
            let mut dp = vec![0.0; n * f_in];
            for i in 0..n {
                let gi = &g[i * f_out..(i + 1) * f_out];
                for a in 0..f_in {
                    let row = &w.data[a * f_out..(a + 1) * f_out];
                    dp[i * f_in + a] = row.iter().zip(gi).map(|(x, y)| x * y).sum();
                }
            }
            g = self.propagate(&dp, f_in, true);
        }
        Ok(g)
    }
}

/// One graph convolution `σ(S·H·W + b)`, with σ = ReLU when `activate`.
pub fn gcn_layer(
    h: &DMatrix<f64>,
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    bias: Option<&[f64]>,
    activate: bool,
) -> Result<DMatrix<f64>> {
    if s.nrows() != s.ncols() || s.ncols() != h.nrows() || h.ncols() != w.nrows() {
        return Err(Error::Shape(format!(
            "gcn_layer: S {}x{}, H {}x{}, W {}x{}",
            s.nrows(),
            s.ncols(),
            h.nrows(),
            h.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let mut z = s * h * w;
    if let Some(b) = bias {
        if b.len() != w.ncols() {
            return Err(Error::Shape("gcn_layer: bias length".into()));
        }
        for mut row in z.row_iter_mut() {
            for (v, bk) in row.iter_mut().zip(b) {
                *v += bk;
            }
        }
    }
    if activate {
        z.apply(|v| *v = v.max(0.0));
    }
    Ok(z)
}
