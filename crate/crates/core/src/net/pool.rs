//! Dimension-aligning average pooling between nodes.
//!
//! Every spatial size in the network is the stem size divided by a power of
//! `kappa`, so standard pooling followed by tailored pooling to the smallest
//! predecessor size always divides evenly.

use crate::error::{Error, Result};
use crate::tensor::{avg_pool, Tensor};

/// Kernel of standard pooling for spatial size `d`; `1` means identity.
///
/// Pooling only applies when `d >= eta`, and never when it would shrink the
/// output below one pixel or leave a remainder.
pub fn sp_kernel(d: usize, eta: usize, kappa: usize) -> usize {
    if d < eta || kappa <= 1 || d < kappa || d % kappa != 0 || d == 1 {
        1
    } else {
        kappa
    }
}

/// Kernel of tailored pooling from size `d` down to `target`.
pub fn tp_kernel(d: usize, target: usize) -> Result<usize> {
    if target == 0 || d % target != 0 {
        return Err(Error::dim(
            "tailored_pool",
            format!("spatial size {d} is not a multiple of {target}"),
        ));
    }
    Ok(d / target)
}

fn spatial(o: &Tensor, op: &'static str) -> Result<usize> {
    Ok(o.dims4(op)?[2])
}

/// Standard pooling of one node output.
pub fn standard_pool(o: &Tensor, eta: usize, kappa: usize) -> Result<Tensor> {
    let k = sp_kernel(spatial(o, "standard_pool")?, eta, kappa);
    if k == 1 {
        return Ok(o.clone());
    }
    avg_pool(o, k)
}

/// Average pooling of `o` down to spatial size `target`.
pub fn tailored_pool(o: &Tensor, target: usize) -> Result<Tensor> {
    let k = tp_kernel(spatial(o, "tailored_pool")?, target)?;
    if k == 1 {
        return Ok(o.clone());
    }
    avg_pool(o, k)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Input current of a node: the sum over predecessors of
/// `sigmoid(gain) * tailored(standard(output))`, aligned to the smallest
/// post-standard-pooling size. `inputs` pairs each output with its raw gain.
pub fn aggregate_inputs(inputs: &[(&Tensor, f64)], eta: usize, kappa: usize) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(Error::invalid("aggregation needs at least one predecessor"));
    }
    let pooled = inputs
        .iter()
        .map(|(o, _)| standard_pool(o, eta, kappa))
        .collect::<Result<Vec<_>>>()?;
    let first = pooled[0].dims4("aggregate_inputs")?;
    let mut target = usize::MAX;
    for p in &pooled {
        let d = p.dims4("aggregate_inputs")?;
        if d[0] != first[0] || d[1] != first[1] {
            return Err(Error::dim(
                "aggregate_inputs",
                format!("predecessor shapes {:?} and {:?} disagree in rows/channels", first, d),
            ));
        }
        target = target.min(d[2]);
    }
    let mut sum: Option<Tensor> = None;
    for (p, (_, gain)) in pooled.iter().zip(inputs) {
        let g = sigmoid(*gain);
        let term = tailored_pool(p, target)?.map(|v| g * v);
        match sum.as_mut() {
            None => sum = Some(term),
            Some(s) => s.add_assign(&term)?,
        }
    }
    Ok(sum.expect("at least one input"))
}
