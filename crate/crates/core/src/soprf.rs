//! Multi-point sequential OPRF building blocks.
//!
//! Each hop hands the successor, column by column, either the sender's
//! current matrix or that matrix XOR the sender's occupancy matrix, chosen
//! by the successor's secret choice bits. Cells a sender's own elements
//! select are zero in its occupancy matrix, so along the path of an element
//! every party holds, the selected bits survive every hop unchanged.

use crate::bitmatrix::{BitMatrix, ChoiceString};
use crate::crypto::{element_indices, h2, OprfValue, PrfKey, RotReceiverBatch, RotSenderBatch};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::params::ProtocolParams;
use crate::transport::{Channel, MsgType};

/// `D^i`: all ones except the cells `(v[j], j)` selected by the party's elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyMatrix(BitMatrix);

impl OccupancyMatrix {
    pub fn matrix(&self) -> &BitMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> BitMatrix {
        self.0
    }
}

/// A party's received OT-result matrix `C^i` and the choice bits used to get it.
#[derive(Debug, Clone)]
pub struct WheelState {
    pub c: BitMatrix,
    pub s: ChoiceString,
}

pub fn build_occupancy(set: &[Vec<u8>], key: &PrfKey, params: &ProtocolParams) -> Result<OccupancyMatrix> {
    build_occupancy_in(Exec::default(), set, key, params)
}

pub fn build_occupancy_in(
    exec: Exec,
    set: &[Vec<u8>],
    key: &PrfKey,
    params: &ProtocolParams,
) -> Result<OccupancyMatrix> {
    if set.len() > params.set_size {
        return Err(Error::OversizeSet {
            len: set.len(),
            bound: params.set_size,
        });
    }
    let mut d = BitMatrix::filled(params.rows, params.cols, true)?;
    let indices = par::map(exec, set, |x| element_indices(key, x, params));
    for v in &indices {
        for (j, &r) in v.as_slice().iter().enumerate() {
            d.set(r as usize, j, false);
        }
    }
    Ok(OccupancyMatrix(d))
}

fn expect_dims(m: &BitMatrix, params: &ProtocolParams) -> Result<()> {
    if m.rows() != params.rows || m.cols() != params.cols {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, parameters say {}x{}",
            m.rows(),
            m.cols(),
            params.rows,
            params.cols
        )));
    }
    Ok(())
}

/// Leader side of the first hop without I/O: returns `(A, Delta)` with
/// `A = R0` and `Delta = (A ^ D1) ^ R1`.
pub fn first_hop_message(d1: &OccupancyMatrix, rot: &RotSenderBatch) -> Result<(BitMatrix, BitMatrix)> {
    let (r0, r1) = rot.matrices()?;
    let a = r0;
    let mut delta = a.xor(d1.matrix())?;
    delta.xor_assign(&r1)?;
    Ok((a, delta))
}

/// `C2_j = r_j` when `s_j = 0`, else `r_j ^ Delta_j`.
pub fn first_hop_reconstruct(rot: &RotReceiverBatch, delta: &BitMatrix) -> Result<WheelState> {
    let r = rot.matrix()?;
    let c = r.xor(&delta.mask_columns(&rot.choices)?)?;
    Ok(WheelState {
        c,
        s: rot.choices.clone(),
    })
}

/// Sender side of a middle hop without I/O: `(Gamma, Delta)` with
/// `Gamma = R0 ^ C` and `Delta = R1 ^ (C ^ D)`.
pub fn middle_hop_messages(
    state: &WheelState,
    di: &OccupancyMatrix,
    rot: &RotSenderBatch,
) -> Result<(BitMatrix, BitMatrix)> {
    let (r0, r1) = rot.matrices()?;
    let e = state.c.xor(di.matrix())?;
    Ok((r0.xor(&state.c)?, r1.xor(&e)?))
}

/// `C_j = r_j ^ Gamma_j` when `s_j = 0`, else `r_j ^ Delta_j`.
pub fn middle_hop_reconstruct(
    rot: &RotReceiverBatch,
    gamma: &BitMatrix,
    delta: &BitMatrix,
) -> Result<WheelState> {
    let r = rot.matrix()?;
    let c = r.xor(&BitMatrix::mux(gamma, delta, &rot.choices)?)?;
    Ok(WheelState {
        c,
        s: rot.choices.clone(),
    })
}

/// Sends `Delta` to `P2` and returns the leader's matrix `A`.
pub fn leader_first_hop(d1: &OccupancyMatrix, rot: &RotSenderBatch, channel: &mut Channel) -> Result<BitMatrix> {
    let (a, delta) = first_hop_message(d1, rot)?;
    channel.send_frame(MsgType::Delta, delta.as_bytes())?;
    Ok(a)
}

pub fn receive_first_hop(
    rot: &RotReceiverBatch,
    channel: &mut Channel,
    params: &ProtocolParams,
) -> Result<WheelState> {
    let payload = channel.recv_frame(MsgType::Delta)?;
    let delta = BitMatrix::from_bytes(params.rows, params.cols, payload)?;
    first_hop_reconstruct(rot, &delta)
}

/// Sends `Gamma || Delta` in one message.
pub fn middle_hop_send(
    state: &WheelState,
    di: &OccupancyMatrix,
    rot: &RotSenderBatch,
    channel: &mut Channel,
) -> Result<()> {
    let (gamma, delta) = middle_hop_messages(state, di, rot)?;
    let mut payload = gamma.into_bytes();
    payload.extend_from_slice(delta.as_bytes());
    channel.send_frame(MsgType::GammaDelta, &payload)
}

pub fn middle_hop_receive(
    rot: &RotReceiverBatch,
    channel: &mut Channel,
    params: &ProtocolParams,
) -> Result<WheelState> {
    let mut payload = channel.recv_frame(MsgType::GammaDelta)?;
    let half = params.matrix_bytes();
    if payload.len() != 2 * half {
        return Err(Error::protocol(format!(
            "gamma/delta message has {} bytes, expected {}",
            payload.len(),
            2 * half
        )));
    }
    let delta_bytes = payload.split_off(half);
    let gamma = BitMatrix::from_bytes(params.rows, params.cols, payload)?;
    let delta = BitMatrix::from_bytes(params.rows, params.cols, delta_bytes)?;
    middle_hop_reconstruct(rot, &gamma, &delta)
}

/// `H2(M_1[v[1]] || ... || M_w[v[w]])` for every element, in input order.
pub fn eval_oprf(
    matrix: &BitMatrix,
    key: &PrfKey,
    set: &[Vec<u8>],
    params: &ProtocolParams,
) -> Result<Vec<OprfValue>> {
    eval_oprf_in(Exec::default(), matrix, key, set, params)
}

pub fn eval_oprf_in(
    exec: Exec,
    matrix: &BitMatrix,
    key: &PrfKey,
    set: &[Vec<u8>],
    params: &ProtocolParams,
) -> Result<Vec<OprfValue>> {
    expect_dims(matrix, params)?;
    par::map(exec, set, |x| {
        let v = element_indices(key, x, params);
        h2(&matrix.gather(&v)?, params.cols, params.ell2)
    })
    .into_iter()
    .collect()
}
