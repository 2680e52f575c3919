//! Analytical cost accounting: exact multiply-accumulate and parameter
//! counts per layer, with the split-versus-full comparison laws.
//!
//! Only convolutions cost anything here. A conv with output W x H is priced
//! Cin*Cout*K^2*W*H MACs; shift/concat/pool/activation nodes are pure data
//! movement and priced zero, which is the whole point of the shift design.

use crate::error::{Error, Result};
use crate::models::{CostClass, LayerKind, ModelGraph, Variant};
use crate::tensor::Element;
use std::collections::BTreeMap;

/// Exact conv pricing; errors instead of wrapping on absurd inputs.
pub fn conv_cost(cin: u64, cout: u64, k: u64, out_w: u64, out_h: u64) -> Result<u128> {
    if cin == 0 || cout == 0 || k == 0 || out_w == 0 || out_h == 0 {
        return Err(Error::Config("conv_cost arguments must be positive".into()));
    }
    (cin as u128)
        .checked_mul(cout as u128)
        .and_then(|v| v.checked_mul((k as u128) * (k as u128)))
        .and_then(|v| v.checked_mul(out_w as u128))
        .and_then(|v| v.checked_mul(out_h as u128))
        .ok_or_else(|| Error::Config("conv_cost overflow".into()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    /// "conv", "convT", or "shift" (always zero MACs).
    pub kind: &'static str,
    pub class: CostClass,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub macs: u128,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    pub variant: Variant,
    pub layers: Vec<LayerCost>,
    pub total_macs: u128,
    pub total_params: u64,
    pub interior_macs: u128,
    pub boundary_macs: u128,
    pub shared_macs: u128,
}

/// Walks the layer graph at the config's input resolution and prices every
/// layer. The match over kinds is exhaustive on purpose: a new kind must be
/// priced here explicitly before it can be counted.
pub fn count_model<T: Element>(m: &ModelGraph<T>) -> Result<ComplexityReport> {
    let dims = m.infer_dims(m.cfg.input_h, m.cfg.input_w)?;
    let mut layers = Vec::new();
    for (i, node) in m.nodes.iter().enumerate() {
        let (c_out, oh, ow) = dims[i];
        let cost = match &node.kind {
            LayerKind::Conv { w, .. } => {
                let wd = m.params[*w].value.dims();
                let (cout, cin, k) = (wd[0], wd[1], wd[2]);
                Some((cin, cout, k, "conv"))
            }
            LayerKind::ConvT { w, .. } => {
                let wd = m.params[*w].value.dims();
                let (cin, cout, k) = (wd[0], wd[1], wd[2]);
                Some((cin, cout, k, "convT"))
            }
            LayerKind::Shift { .. } => {
                layers.push(LayerCost {
                    name: node.name.clone(),
                    kind: "shift",
                    class: node.class,
                    cin: c_out,
                    cout: c_out,
                    k: 0,
                    out_h: oh,
                    out_w: ow,
                    macs: 0,
                    params: 0,
                });
                None
            }
            // structural bookkeeping: moves or selects data, no arithmetic
            LayerKind::Input { .. }
            | LayerKind::Relu
            | LayerKind::Tanh
            | LayerKind::MaxPool2
            | LayerKind::Concat => None,
        };
        if let Some((cin, cout, k, kind)) = cost {
            layers.push(LayerCost {
                name: node.name.clone(),
                kind,
                class: node.class,
                cin,
                cout,
                k,
                out_h: oh,
                out_w: ow,
                macs: conv_cost(cin as u64, cout as u64, k as u64, ow as u64, oh as u64)?,
                params: (cout * (cin * k * k + 1)) as u64,
            });
        }
    }

    let mut report = ComplexityReport {
        variant: m.variant,
        total_macs: 0,
        total_params: 0,
        interior_macs: 0,
        boundary_macs: 0,
        shared_macs: 0,
        layers,
    };
    for l in &report.layers {
        report.total_macs += l.macs;
        report.total_params += l.params;
        match l.class {
            CostClass::Interior => report.interior_macs += l.macs,
            CostClass::Boundary => report.boundary_macs += l.macs,
            CostClass::Shared => report.shared_macs += l.macs,
        }
    }
    Ok(report)
}

/// Strips a leading "path<digits>." so split layers can be matched to their
/// full-width twins.
pub fn twin_name(name: &str) -> &str {
    if let Some(rest) = name.strip_prefix("path") {
        if let Some(dot) = rest.find('.') {
            if dot > 0 && rest[..dot].bytes().all(|b| b.is_ascii_digit()) {
                return &rest[dot + 1..];
            }
        }
    }
    name
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub macs_ratio: (u128, u128),
    pub params_ratio: (u64, u64),
}

impl Comparison {
    pub fn macs_percent(&self) -> f64 {
        100.0 * self.macs_ratio.0 as f64 / self.macs_ratio.1 as f64
    }

    pub fn params_percent(&self) -> f64 {
        100.0 * self.params_ratio.0 as f64 / self.params_ratio.1 as f64
    }
}

pub fn compare(candidate: &ComplexityReport, reference: &ComplexityReport) -> Result<Comparison> {
    if reference.total_macs == 0 || reference.total_params == 0 {
        return Err(Error::Config("comparison reference has zero totals".into()));
    }
    Ok(Comparison {
        macs_ratio: (candidate.total_macs, reference.total_macs),
        params_ratio: (candidate.total_params, reference.total_params),
    })
}

/// Result of checking the per-path quartering law against a reference model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitLaw {
    /// Sum over the candidate's interior conv layers.
    pub candidate_interior_macs: u128,
    /// Sum over the distinct reference twins of those layers.
    pub reference_twin_macs: u128,
    pub layers_checked: usize,
    /// Distinct reference layer names that were matched.
    pub twins: Vec<String>,
}

/// Verifies that every interior conv of an n-way split model costs exactly
/// 1/n^2 of its full-width twin, and that the n copies therefore sum to 1/n
/// of the twins. Integer-exact; any deviation is an error naming the layer.
pub fn split_law(candidate: &ComplexityReport, reference: &ComplexityReport, n: u64) -> Result<SplitLaw> {
    if n == 0 {
        return Err(Error::Config("split factor must be positive".into()));
    }
    let by_name: BTreeMap<&str, &LayerCost> =
        reference.layers.iter().map(|l| (l.name.as_str(), l)).collect();
    let mut twin_macs: BTreeMap<&str, u128> = BTreeMap::new();
    let mut cand_sum: u128 = 0;
    let mut checked = 0usize;
    for l in &candidate.layers {
        if l.class != CostClass::Interior || l.macs == 0 {
            continue;
        }
        let tn = twin_name(&l.name);
        let twin = by_name.get(tn).ok_or_else(|| {
            Error::Config(format!("no reference twin named {tn} for split layer {}", l.name))
        })?;
        if l.macs * (n as u128) * (n as u128) != twin.macs {
            return Err(Error::Config(format!(
                "split layer {} costs {} MACs; {} times n^2 = {} != twin {} at {}",
                l.name,
                l.macs,
                l.macs,
                l.macs * (n as u128) * (n as u128),
                tn,
                twin.macs
            )));
        }
        cand_sum += l.macs;
        checked += 1;
        twin_macs.insert(tn, twin.macs);
    }
    let ref_sum: u128 = twin_macs.values().sum();
    if cand_sum * (n as u128) != ref_sum {
        return Err(Error::Config(format!(
            "aggregate split interiors {cand_sum} x {n} != reference twins {ref_sum}"
        )));
    }
    Ok(SplitLaw {
        candidate_interior_macs: cand_sum,
        reference_twin_macs: ref_sum,
        layers_checked: checked,
        twins: twin_macs.keys().map(|s| s.to_string()).collect(),
    })
}

/// Aligned human-readable table.
pub fn render_text(r: &ComplexityReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("model: {}\n", r.variant.name()));
    out.push_str(&format!(
        "{:<22} {:<6} {:<9} {:>5} {:>5} {:>2} {:>9} {:>14} {:>10}\n",
        "layer", "kind", "class", "cin", "cout", "k", "out", "macs", "params"
    ));
    for l in &r.layers {
        out.push_str(&format!(
            "{:<22} {:<6} {:<9} {:>5} {:>5} {:>2} {:>9} {:>14} {:>10}\n",
            l.name,
            l.kind,
            l.class.name(),
            l.cin,
            l.cout,
            l.k,
            format!("{}x{}", l.out_w, l.out_h),
            l.macs,
            l.params
        ));
    }
    out.push_str(&format!(
        "total: {} MACs, {} params (interior {}, boundary {}, shared {})\n",
        r.total_macs, r.total_params, r.interior_macs, r.boundary_macs, r.shared_macs
    ));
    out
}

/// Machine-readable key-value rendering. One `layer=` line per costed layer:
/// name|kind|class|cin|cout|k|out_h|out_w|macs|params.
pub fn render_kv(r: &ComplexityReport) -> String {
    let mut out = String::new();
    out.push_str("schema=complexity-report-v1\n");
    out.push_str(&format!("variant={}\n", r.variant.name()));
    out.push_str(&format!("total_macs={}\n", r.total_macs));
    out.push_str(&format!("total_params={}\n", r.total_params));
    out.push_str(&format!("class.interior.macs={}\n", r.interior_macs));
    out.push_str(&format!("class.boundary.macs={}\n", r.boundary_macs));
    out.push_str(&format!("class.shared.macs={}\n", r.shared_macs));
    for l in &r.layers {
        out.push_str(&format!(
            "layer={}|{}|{}|{}|{}|{}|{}|{}|{}|{}\n",
            l.name, l.kind, l.class.name(), l.cin, l.cout, l.k, l.out_h, l.out_w, l.macs, l.params
        ));
    }
    out
}
