//! Actor and critics are small networks shared by every present user. The
//! actor maps one user's view to a bandwidth share; each critic scores one
//! user's share of the value given its VM, and `Q(s, a)` is the sum over
//! present users. VMs are picked user by user as the critic's best choice.

use rand::Rng;

use super::features::{BACKLOG_START, GLOBAL_FEATURES, USER_FEATURES};
use crate::error::{Error, Result};
use crate::neural::{Matrix, Network};

/// Pooled entries: summed bandwidth share, summed compute, mean priority.
const POOLED: usize = 3;
/// Ranked entries: bandwidth share and compute of the users ranked ahead.
const RANKED: usize = 2;

/// Input width of the shared actor network.
pub const ACTOR_INPUT: usize = GLOBAL_FEATURES + USER_FEATURES + POOLED + RANKED;
/// Output width of the shared actor network.
pub const ACTOR_OUTPUT: usize = 1;
/// Input width of a shared critic network: the actor's view plus the user's
/// bandwidth fraction, the summed fraction and the work queued ahead of the
/// user on its VM.
pub const CRITIC_INPUT: usize = ACTOR_INPUT + 3;

/// Number of user slots in a row of normalized features.
pub fn slot_count(state_cols: usize) -> Result<usize> {
    if state_cols < GLOBAL_FEATURES || (state_cols - GLOBAL_FEATURES) % USER_FEATURES != 0 {
        return Err(Error::Shape(format!("{state_cols} state features")));
    }
    Ok((state_cols - GLOBAL_FEATURES) / USER_FEATURES)
}

fn user(row: &[f64], j: usize) -> &[f64] {
    &row[GLOBAL_FEATURES + USER_FEATURES * j..][..USER_FEATURES]
}

fn present(row: &[f64], j: usize) -> bool {
    user(row, j)[USER_FEATURES - 1] > 0.5
}

/// Present `(batch row, user)` pairs of a batch of normalized states; one
/// network row per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLayout {
    pub batch: usize,
    pub users: usize,
    pub slots: Vec<(usize, usize)>,
}

impl SlotLayout {
    pub fn of(states: &Matrix) -> Result<Self> {
        let users = slot_count(states.cols())?;
        let slots = (0..states.rows())
            .flat_map(|i| (0..users).map(move |j| (i, j)))
            .filter(|&(i, j)| present(states.row(i), j))
            .collect();
        Ok(SlotLayout {
            batch: states.rows(),
            users,
            slots,
        })
    }

    /// Sums per-slot values into one value per batch row.
    pub fn sum_rows(&self, per_slot: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.batch];
        for (&(i, _), v) in self.slots.iter().zip(per_slot) {
            out[i] += v;
        }
        out
    }

    /// Broadcasts one value per batch row to every slot of that row.
    pub fn spread_rows(&self, per_row: &[f64]) -> Matrix {
        let data = self.slots.iter().map(|&(i, _)| per_row[i]).collect();
        Matrix::from_vec(self.slots.len(), 1, data).expect("one column per slot")
    }
}

/// Users of a state row from most to least valuable: higher priority first,
/// then smaller bandwidth share, then lower index.
fn ranking(row: &[f64], users: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..users).filter(|&j| present(row, j)).collect();
    order.sort_by(|&a, &b| {
        let (ua, ub) = (user(row, a), user(row, b));
        ub[2].total_cmp(&ua[2]).then(ua[0].total_cmp(&ub[0])).then(a.cmp(&b))
    });
    order
}

/// Per-slot actor inputs: region features, own user features, pooled totals
/// and the demand of the users ranked ahead.
pub fn actor_inputs(states: &Matrix, layout: &SlotLayout) -> Matrix {
    let n = layout.users;
    let mut ahead = vec![[0.0; RANKED]; states.rows() * n];
    let pooled: Vec<[f64; POOLED]> = (0..states.rows())
        .map(|i| {
            let row = states.row(i);
            let mut acc = [0.0; RANKED];
            for j in ranking(row, n) {
                ahead[i * n + j] = acc;
                acc[0] += user(row, j)[0];
                acc[1] += user(row, j)[1];
            }
            let mut p = [0.0; POOLED];
            let mut count = 0.0;
            for j in (0..n).filter(|&j| present(row, j)) {
                let u = user(row, j);
                p[0] += u[0];
                p[1] += u[1];
                p[2] += u[2];
                count += 1.0;
            }
            if count > 0.0 {
                p[2] /= count;
            }
            p
        })
        .collect();
    let mut data = Vec::with_capacity(layout.slots.len() * ACTOR_INPUT);
    for &(i, j) in &layout.slots {
        let row = states.row(i);
        data.extend_from_slice(&row[..GLOBAL_FEATURES]);
        data.extend_from_slice(user(row, j));
        data.extend_from_slice(&pooled[i]);
        data.extend_from_slice(&ahead[i * n + j]);
    }
    Matrix::from_vec(layout.slots.len(), ACTOR_INPUT, data).expect("actor input width")
}

/// Gathers per-slot actor outputs into action rows `[shares | positions]`
/// with every position at zero; absent users get share zero.
pub fn assemble(out: &Matrix, layout: &SlotLayout) -> Result<Matrix> {
    if out.shape() != (layout.slots.len(), ACTOR_OUTPUT) {
        return Err(Error::Shape(format!(
            "{}x{} actor outputs for {} slots",
            out.rows(),
            out.cols(),
            layout.slots.len()
        )));
    }
    let mut a = Matrix::zeros(layout.batch, 2 * layout.users);
    for (r, &(i, j)) in layout.slots.iter().enumerate() {
        a[(i, j)] = out[(r, 0)];
    }
    Ok(a)
}

/// Backward pass of [`assemble`] for the share columns.
pub fn assemble_backward(upstream: &Matrix, layout: &SlotLayout) -> Matrix {
    let mut out = Matrix::zeros(layout.slots.len(), ACTOR_OUTPUT);
    for (r, &(i, j)) in layout.slots.iter().enumerate() {
        out[(r, 0)] = upstream[(i, j)];
    }
    out
}

/// VM count of a normalized state row.
fn vm_count(row: &[f64], vm_scale: f64) -> usize {
    ((row[1] * vm_scale).round() as usize).max(1)
}

/// VM picked by position `x` among `vms` machines, as in action decoding.
fn vm_of(x: f64, vms: usize) -> usize {
    ((x.clamp(0.0, 1.0) * vms as f64).floor() as usize).min(vms - 1)
}

/// Position at the centre of VM `k`'s interval.
pub fn vm_position(k: usize, vms: usize) -> f64 {
    (k as f64 + 0.5) / vms as f64
}

fn total_share(row: &[f64], action: &[f64], users: usize) -> f64 {
    (0..users).filter(|&k| present(row, k)).map(|k| action[k]).sum()
}

/// Per-slot critic inputs for executed actions. `vm_scale` undoes the VM
/// count normalization of the second region feature.
pub fn critic_inputs(states: &Matrix, actions: &Matrix, layout: &SlotLayout, vm_scale: f64) -> Result<Matrix> {
    let n = layout.users;
    if actions.shape() != (layout.batch, 2 * n) || states.rows() != layout.batch {
        return Err(Error::Shape(format!(
            "{}x{} actions for {} states of {n} users",
            actions.rows(),
            actions.cols(),
            states.rows()
        )));
    }
    let base = actor_inputs(states, layout);
    let mut data = Vec::with_capacity(layout.slots.len() * CRITIC_INPUT);
    for (r, &(i, j)) in layout.slots.iter().enumerate() {
        let row = states.row(i);
        let a = actions.row(i);
        let vms = vm_count(row, vm_scale);
        let mine = vm_of(a[n + j], vms);
        let ahead: f64 = row[BACKLOG_START + mine]
            + (0..j)
                .filter(|&k| present(row, k) && vm_of(a[n + k], vms) == mine)
                .map(|k| user(row, k)[1])
                .sum::<f64>();
        data.extend_from_slice(base.row(r));
        data.extend_from_slice(&[a[j], total_share(row, a, n), ahead]);
    }
    Matrix::from_vec(layout.slots.len(), CRITIC_INPUT, data)
}

/// Fills the position columns of `actions`: users in index order each take
/// the VM with the highest critic score given the VMs already taken. With
/// `explore = Some((p, rng))` a user takes a uniformly random VM with
/// probability `p`.
pub fn choose_vms<R: Rng + ?Sized>(
    critic: &Network,
    states: &Matrix,
    actions: &mut Matrix,
    layout: &SlotLayout,
    vm_scale: f64,
    mut explore: Option<(f64, &mut R)>,
) -> Result<()> {
    let n = layout.users;
    if actions.shape() != (layout.batch, 2 * n) {
        return Err(Error::Shape(format!(
            "{}x{} actions for {} states of {n} users",
            actions.rows(),
            actions.cols(),
            layout.batch
        )));
    }
    let base = actor_inputs(states, layout);
    let vms: Vec<usize> = (0..layout.batch).map(|i| vm_count(states.row(i), vm_scale)).collect();
    let totals: Vec<f64> = (0..layout.batch)
        .map(|i| total_share(states.row(i), actions.row(i), n))
        .collect();
    let mut load: Vec<Vec<f64>> = (0..layout.batch)
        .map(|i| (0..vms[i]).map(|k| states.row(i)[BACKLOG_START + k]).collect())
        .collect();
    let mut by_user = vec![Vec::new(); n];
    for (r, &(i, j)) in layout.slots.iter().enumerate() {
        by_user[j].push((r, i));
    }
    for (j, slots) in by_user.iter().enumerate() {
        let mut data = Vec::new();
        for &(r, i) in slots {
            for k in 0..vms[i] {
                data.extend_from_slice(base.row(r));
                data.extend_from_slice(&[actions[(i, j)], totals[i], load[i][k]]);
            }
        }
        if data.is_empty() {
            continue;
        }
        let scores = critic.forward_batch(&Matrix::from_vec(data.len() / CRITIC_INPUT, CRITIC_INPUT, data)?)?;
        let mut offset = 0;
        for &(_, i) in slots {
            let v = vms[i];
            let mut best = 0;
            for k in 1..v {
                if scores[(offset + k, 0)] > scores[(offset + best, 0)] {
                    best = k;
                }
            }
            offset += v;
            if let Some((p, rng)) = explore.as_mut() {
                if rng.random::<f64>() < *p {
                    best = rng.random_range(0..v);
                }
            }
            actions[(i, n + j)] = vm_position(best, v);
            load[i][best] += user(states.row(i), j)[1];
        }
    }
    Ok(())
}

/// Maps critic input gradients back to `d Q / d action`. Positions enter
/// only through VM indices and get zero gradient.
pub fn critic_action_grad(input_grad: &Matrix, layout: &SlotLayout) -> Matrix {
    let mut total = vec![0.0; layout.batch];
    for (r, &(i, _)) in layout.slots.iter().enumerate() {
        total[i] += input_grad[(r, ACTOR_INPUT + 1)];
    }
    let mut out = Matrix::zeros(layout.batch, 2 * layout.users);
    for (r, &(i, j)) in layout.slots.iter().enumerate() {
        out[(i, j)] = input_grad[(r, ACTOR_INPUT)] + total[i];
    }
    out
}
