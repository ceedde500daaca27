use crate::error::{Error, Result};
use crate::rau::StepVars;
use crate::tensor::{Graph, Unary, Var};

pub(super) const LOG_EPS: f64 = 1e-12;

/// `-y^T log(max(a, 1e-12))` for a one-hot `y`.
pub fn cross_entropy(a: &[f64], y: &[f64]) -> Result<f64> {
    if a.len() != y.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: vec![a.len()],
            right: vec![y.len()],
        });
    }
    let hot = one_hot_index(y)?;
    Ok(-a[hot].max(LOG_EPS).ln())
}

fn one_hot_index(y: &[f64]) -> Result<usize> {
    let ones: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1.0).collect();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    if ones.len() != 1 || zeros + 1 != y.len() {
        return Err(Error::contract("cross_entropy: target is not one-hot"));
    }
    Ok(ones[0])
}

/// Joint loss `(1/N) sum_n sum_{k active} CE(a_n^k, y_n)`.
///
/// `step_answers[n][k]` is example `n`'s answer distribution at unit `k`;
/// units beyond `step_answers[n].len()` must be inactive. The inner sum over
/// units is completed per example before accumulating over examples.
pub fn joint_loss(step_answers: &[Vec<Vec<f64>>], labels: &[Vec<f64>], active: &[bool]) -> Result<f64> {
    if step_answers.is_empty() {
        return Err(Error::contract("joint_loss: empty batch"));
    }
    if labels.len() != step_answers.len() {
        return Err(Error::contract("joint_loss: one label per example required"));
    }
    if !active.iter().any(|&a| a) {
        return Err(Error::contract("joint_loss: every unit is inactive"));
    }
    let mut total = 0.0;
    for (answers, y) in step_answers.iter().zip(labels) {
        let mut per_example = 0.0;
        for (k, &on) in active.iter().enumerate() {
            if !on {
                continue;
            }
            let a = answers.get(k).ok_or_else(|| {
                Error::contract(format!("joint_loss: active unit {} has no output", k + 1))
            })?;
            per_example += cross_entropy(a, y)?;
        }
        total += per_example;
    }
    Ok(total / step_answers.len() as f64)
}

/// Graph version of [`joint_loss`] over column-batched step outputs, with
/// labels given as class ids. Produces the same value bit for bit.
pub fn joint_loss_graph(g: &mut Graph, steps: &[StepVars], labels: &[usize], active: &[bool]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::contract("joint_loss: empty batch"));
    }
    let mut acc: Option<Var> = None;
    for (k, &on) in active.iter().enumerate() {
        if !on {
            continue;
        }
        let step = steps.get(k).ok_or_else(|| {
            Error::contract(format!("joint_loss: active unit {} was not unrolled", k + 1))
        })?;
        let ce = g.neg_log_pick(step.answer, labels)?;
        acc = Some(match acc {
            None => ce,
            Some(prev) => g.add(prev, ce)?,
        });
    }
    let per_example = acc.ok_or_else(|| Error::contract("joint_loss: every unit is inactive"))?;
    let total = g.sum(per_example)?;
    g.unary(total, Unary::DivScalar(labels.len() as f64))
}

/// VQA consensus accuracy: `min(#matching annotators / 3, 1)`.
pub fn vqa_accuracy(predicted: usize, annotators: &[usize]) -> Result<f64> {
    if annotators.is_empty() {
        return Err(Error::contract("vqa_accuracy: empty annotator list"));
    }
    let matches = annotators.iter().filter(|&&a| a == predicted).count();
    Ok((matches as f64 / 3.0).min(1.0))
}

#[cfg(test)]
fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    y
}
