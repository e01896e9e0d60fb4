//! Additive secret sharing and the masked matrix-multiplication protocol.
//!
//! Two parties hold private matrices P (x by y, "left") and Q (y by z,
//! "right") over Z_{2^l}, y even. Each draws a fresh uniform mask and they
//! exchange three messages:
//!
//! 1. left -> right: `masked = P + P'` and `folded = P'_e + P'_o`, where the
//!    odd/even subscripts take alternating columns (1-based, odd first);
//! 2. right -> left: `masked = Q' - Q` and `folded = Q'_e - Q'_o` over
//!    alternating rows;
//! 3. right -> left: N, right's local cross term.
//!
//! Left combines its own cross term M with N and obtains `M + N = P * Q`
//! exactly in the ring. The transcripts reveal only `Q_e - Q_o` to the left
//! party and `P_e + P_o` to the right party; [`left_leakage`] and
//! [`right_leakage`] compute those terms so tests can pin the bound down.
//!
//! When Q is sparse the right party masks only Q's support plus a few
//! decoy positions per row, keeping its shares sparse without revealing
//! exact row occupancy. A Beaver-triple baseline ([`tismm_execute`]) with a
//! trusted initializer is included for comparison.

use rand::rngs::OsRng;
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::ring::{FixedPointConfig, MatrixData, RingElem, RingMatrix, SparseRingMatrix};
use crate::transport::{Channel, Frame, MsgType};

/// Split a scalar into two additive shares; the second share is uniform over
/// the whole ring, so alone it carries no information about `x`.
pub fn share_scalar<R: Rng + CryptoRng>(
    x: RingElem,
    cfg: FixedPointConfig,
    rng: &mut R,
) -> (RingElem, RingElem) {
    let other = rng.next_u64() & cfg.mask();
    (RingElem(cfg.wrap_sub(x.0, other)), RingElem(other))
}

/// Recombine additive shares.
pub fn reconstruct_scalar(a: RingElem, b: RingElem, cfg: FixedPointConfig) -> RingElem {
    RingElem(cfg.wrap_add(a.0, b.0))
}

/// Make the shared inner dimension even by appending a zero column to the
/// left factor and a zero row to the right factor; the product is unchanged.
pub fn pad_even(p: &RingMatrix, q: &RingMatrix) -> Result<(RingMatrix, RingMatrix)> {
    if p.cols() != q.rows() {
        return Err(Error::Dimension(format!(
            "inner dimensions differ: {} vs {}",
            p.cols(),
            q.rows()
        )));
    }
    if p.cols() % 2 == 0 {
        Ok((p.clone(), q.clone()))
    } else {
        Ok((p.pad_col(), q.pad_row()))
    }
}

/// Source of one-time masks. Not cloneable and every draw advances the
/// stream, so a mask position can never be replayed; `draws` exposes the
/// position for auditing.
pub struct MaskSource {
    rng: ChaCha20Rng,
    draws: u64,
}

impl MaskSource {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    pub fn from_entropy() -> Self {
        let mut seed = [0u8; 32];
        OsRng.fill_bytes(&mut seed);
        Self {
            rng: ChaCha20Rng::from_seed(seed),
            draws: 0,
        }
    }

    /// Number of ring words drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    fn next_word(&mut self, cfg: FixedPointConfig) -> u64 {
        self.draws += 1;
        self.rng.next_u64() & cfg.mask()
    }

    /// Fresh uniform matrix over the ring.
    pub fn uniform_matrix(
        &mut self,
        rows: usize,
        cols: usize,
        cfg: FixedPointConfig,
    ) -> RingMatrix {
        RingMatrix::from_fn(rows, cols, |_, _| self.next_word(cfg))
    }

    pub fn rng(&mut self) -> &mut (impl Rng + CryptoRng) {
        &mut self.rng
    }
}

/// How the right party masks its matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskPolicy {
    pub mode: MaskMode,
    /// Sparse mode: per-row decoy budget as a multiple of the row's nonzero
    /// count. This ratio is private to the right party and never serialized.
    pub d_prime_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Dense,
    Sparse,
}

/// Decoys added to a structurally empty row so its emptiness is not exposed.
const EMPTY_ROW_DECOYS: usize = 4;

impl MaskPolicy {
    pub fn dense() -> Self {
        Self {
            mode: MaskMode::Dense,
            d_prime_ratio: 1.0,
        }
    }

    pub fn sparse() -> Self {
        Self {
            mode: MaskMode::Sparse,
            d_prime_ratio: 1.0,
        }
    }

    /// Decoy count for a row with `d` nonzeros out of `z` columns.
    pub fn decoys(&self, d: usize, z: usize) -> usize {
        if d == 0 {
            EMPTY_ROW_DECOYS.min(z)
        } else {
            let want = (d as f64 * self.d_prime_ratio).round() as usize;
            want.min(z - d)
        }
    }
}

/// What the left party sends: `masked = P + P'`, `folded = P'_e + P'_o`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeftBundle {
    pub masked: RingMatrix,
    pub folded: RingMatrix,
}

/// What the right party sends: `masked = Q' - Q`, `folded = Q'_e - Q'_o`.
/// Representation (dense or sparse) follows the right party's mask policy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RightBundle {
    pub masked: MatrixData,
    pub folded: MatrixData,
}

/// Left party's in-flight state: consumed when the product share is formed,
/// so a mask is used exactly once.
pub struct LeftSession {
    input: RingMatrix,
    mask: RingMatrix,
    cfg: FixedPointConfig,
}

/// Right party's in-flight state.
pub struct RightSession {
    input: MatrixData,
    mask: MatrixData,
    cfg: FixedPointConfig,
}

/// Left party round: draw a fresh mask for P and form the outgoing bundle.
/// Requires an even number of columns (see [`pad_even`]).
pub fn left_start(
    p: &RingMatrix,
    cfg: FixedPointConfig,
    masks: &mut MaskSource,
) -> (LeftSession, LeftBundle) {
    assert!(p.cols() % 2 == 0, "left factor must have even width");
    let mask = masks.uniform_matrix(p.rows(), p.cols(), cfg);
    let (mask_odd, mask_even) = mask.odd_even_cols();
    let bundle = LeftBundle {
        masked: p.add(&mask, cfg),
        folded: mask_even.add(&mask_odd, cfg),
    };
    (
        LeftSession {
            input: p.clone(),
            mask,
            cfg,
        },
        bundle,
    )
}

/// Right party round: mask Q according to the policy and form the bundle.
///
/// Dense mode draws a fully uniform mask. Sparse mode draws random values at
/// Q's support plus per-row decoy positions, so the share supports stay
/// sparse; the resulting bundle is serialized as coordinate triples.
pub fn right_start(
    q: &MatrixData,
    policy: &MaskPolicy,
    cfg: FixedPointConfig,
    masks: &mut MaskSource,
) -> (RightSession, RightBundle) {
    assert!(q.rows() % 2 == 0, "right factor must have even height");
    match policy.mode {
        MaskMode::Dense => {
            let q_dense = q.to_dense();
            let mask = masks.uniform_matrix(q_dense.rows(), q_dense.cols(), cfg);
            let (mask_odd, mask_even) = mask.odd_even_rows();
            let bundle = RightBundle {
                masked: mask.sub(&q_dense, cfg).into(),
                folded: mask_even.sub(&mask_odd, cfg).into(),
            };
            (
                RightSession {
                    input: q_dense.into(),
                    mask: mask.into(),
                    cfg,
                },
                bundle,
            )
        }
        MaskMode::Sparse => {
            let sparse = match q {
                MatrixData::Sparse(s) => s.clone(),
                MatrixData::Dense(d) => SparseRingMatrix::from_dense(d),
            };
            let mask = sparse_mask(&sparse, policy, cfg, masks);
            let (mask_odd, mask_even) = mask.odd_even_rows();
            let bundle = RightBundle {
                masked: mask.sub_structural(&sparse, cfg).into(),
                folded: mask_even.sub_structural(&mask_odd, cfg).into(),
            };
            (
                RightSession {
                    input: sparse.into(),
                    mask: mask.into(),
                    cfg,
                },
                bundle,
            )
        }
    }
}

/// Build the sparse mask: uniform values on Q's support plus decoys chosen
/// uniformly among each row's zero positions.
fn sparse_mask(
    q: &SparseRingMatrix,
    policy: &MaskPolicy,
    cfg: FixedPointConfig,
    masks: &mut MaskSource,
) -> SparseRingMatrix {
    let z = q.cols();
    let mut mask = SparseRingMatrix::new(q.rows(), z);
    for r in 0..q.rows() {
        let support: Vec<u32> = q.row(r).iter().map(|&(c, _)| c).collect();
        for &c in &support {
            let v = masks.next_word(cfg);
            mask.push(r, c, v);
        }
        let decoys = policy.decoys(support.len(), z);
        let mut chosen = std::collections::HashSet::new();
        while chosen.len() < decoys {
            let c = masks.rng().gen_range(0..z as u32);
            if support.binary_search(&c).is_err() && chosen.insert(c) {
                let v = masks.next_word(cfg);
                mask.push(r, c, v);
            }
        }
    }
    mask.sort_rows();
    mask
}

impl LeftSession {
    /// Left cross term `M = (P + 2P') * rb.masked + (P'_e + 2P'_o) * rb.folded`;
    /// kept non-consuming for the epoch-level share reuse in the trainer's
    /// stale mode.
    pub(crate) fn cross_term(&self, rb: &RightBundle) -> Result<RingMatrix> {
        let cfg = self.cfg;
        if rb.masked.rows() != self.input.cols() {
            return Err(Error::Dimension(format!(
                "right bundle height {} does not match left width {}",
                rb.masked.rows(),
                self.input.cols()
            )));
        }
        let (mask_odd, mask_even) = self.mask.odd_even_cols();
        let own_folded = mask_even.add(&mask_odd, cfg);
        let lhs1 = self.input.add(&self.mask.double(cfg), cfg);
        let lhs2 = own_folded.add(&mask_odd, cfg);
        let t1 = rb.masked.left_mul(&lhs1, cfg)?;
        let t2 = rb.folded.left_mul(&lhs2, cfg)?;
        Ok(t1.add(&t2, cfg))
    }

    /// Consume the session and return M.
    pub fn finish(self, rb: &RightBundle) -> Result<RingMatrix> {
        self.cross_term(rb)
    }

    /// Combine the two cross terms into the product `P * Q`.
    pub fn reveal(m: &RingMatrix, n: &RingMatrix, cfg: FixedPointConfig) -> RingMatrix {
        m.add(n, cfg)
    }
}

impl RightSession {
    /// Right cross term `N = lb.masked * (2Q - Q') - lb.folded * (2Q'_e - Q'_o)`.
    pub fn finish(self, lb: &LeftBundle) -> Result<RingMatrix> {
        let cfg = self.cfg;
        if lb.masked.cols() != self.input.rows() {
            return Err(Error::Dimension(format!(
                "left bundle width {} does not match right height {}",
                lb.masked.cols(),
                self.input.rows()
            )));
        }
        match (&self.input, &self.mask) {
            (MatrixData::Dense(q), MatrixData::Dense(mask)) => {
                let (mask_odd, mask_even) = mask.odd_even_rows();
                let own_folded = mask_even.sub(&mask_odd, cfg);
                let rhs1 = q.double(cfg).sub(mask, cfg);
                let rhs2 = own_folded.add(&mask_even, cfg);
                let t1 = lb.masked.matmul(&rhs1, cfg)?;
                let t2 = lb.folded.matmul(&rhs2, cfg)?;
                Ok(t1.sub(&t2, cfg))
            }
            (MatrixData::Sparse(q), MatrixData::Sparse(mask)) => {
                let (mask_odd, mask_even) = mask.odd_even_rows();
                let own_folded = mask_even.sub_structural(&mask_odd, cfg);
                // 2Q - Q' stays supported on the mask support
                let two_q = scale_sparse(q, 2, cfg);
                let rhs1 = two_q.sub_structural(mask, cfg);
                let rhs2 = add_structural(&own_folded, &mask_even, cfg);
                let t1 = lb.masked.matmul_sparse(&rhs1, cfg)?;
                let t2 = lb.folded.matmul_sparse(&rhs2, cfg)?;
                Ok(t1.sub(&t2, cfg))
            }
            _ => Err(Error::Protocol(
                "right session input/mask representation mismatch".into(),
            )),
        }
    }
}

fn scale_sparse(m: &SparseRingMatrix, k: u64, cfg: FixedPointConfig) -> SparseRingMatrix {
    let mut out = SparseRingMatrix::new(m.rows(), m.cols());
    for r in 0..m.rows() {
        for &(c, v) in m.row(r) {
            out.push(r, c, cfg.wrap_mul(v, k));
        }
    }
    out
}

fn add_structural(
    a: &SparseRingMatrix,
    b: &SparseRingMatrix,
    cfg: FixedPointConfig,
) -> SparseRingMatrix {
    // a + b = a - (0 - b)
    let neg_b = scale_sparse(b, cfg.mask(), cfg); // mask == -1 in the ring
    a.sub_structural(&neg_b, cfg)
}

/// What the left party can derive from the right bundle: exactly
/// `Q_e - Q_o` (even minus odd rows of Q), nothing more.
pub fn left_leakage(rb: &RightBundle, cfg: FixedPointConfig) -> RingMatrix {
    let masked = rb.masked.to_dense();
    let folded = rb.folded.to_dense();
    let (m_odd, m_even) = masked.odd_even_rows();
    // folded - (masked_e - masked_o) = (Q'_e - Q'_o) - (Q'_e - Q_e - Q'_o + Q_o)
    folded.sub(&m_even.sub(&m_odd, cfg), cfg)
}

/// What the right party can derive from the left bundle: exactly
/// `P_e + P_o` (even plus odd columns of P).
pub fn right_leakage(lb: &LeftBundle, cfg: FixedPointConfig) -> RingMatrix {
    let (m_odd, m_even) = lb.masked.odd_even_cols();
    m_even.add(&m_odd, cfg).sub(&lb.folded, cfg)
}

/// Ideal-world counterpart of the right bundle as seen by the left party:
/// a uniform matrix plays `masked`, and `folded` is reconstructed from it
/// and the leaked term alone. Distribution-identical to the real bundle.
pub fn simulate_right_bundle(
    q: &RingMatrix,
    cfg: FixedPointConfig,
    masks: &mut MaskSource,
) -> RightBundle {
    let star = masks.uniform_matrix(q.rows(), q.cols(), cfg);
    let (star_odd, star_even) = star.odd_even_rows();
    let (q_odd, q_even) = q.odd_even_rows();
    let leaked = q_even.sub(&q_odd, cfg);
    let folded = star_even.sub(&star_odd, cfg).sub(&leaked, cfg);
    RightBundle {
        masked: star.into(),
        folded: folded.into(),
    }
}

// --- wire helpers -----------------------------------------------------------

const KIND_DENSE: u8 = 0;
const KIND_SPARSE: u8 = 1;

/// Byte length of a dense matrix payload inside a bundle frame: one kind
/// byte, a u32 length, then the dense blob.
pub fn dense_payload_len(rows: usize, cols: usize, cfg: FixedPointConfig) -> usize {
    5 + RingMatrix::byte_len(rows, cols, cfg)
}

/// Byte length of a sparse matrix payload inside a bundle frame.
pub fn sparse_payload_len(nnz: usize, cfg: FixedPointConfig) -> usize {
    5 + SparseRingMatrix::byte_len(nnz, cfg)
}

fn write_matrix(buf: &mut Vec<u8>, m: &MatrixData, cfg: FixedPointConfig) {
    match m {
        MatrixData::Dense(d) => {
            buf.push(KIND_DENSE);
            let blob = d.to_bytes(cfg);
            buf.extend_from_slice(&(blob.len() as u32).to_le_bytes());
            buf.extend_from_slice(&blob);
        }
        MatrixData::Sparse(s) => {
            buf.push(KIND_SPARSE);
            let blob = s.to_bytes(cfg);
            buf.extend_from_slice(&(blob.len() as u32).to_le_bytes());
            buf.extend_from_slice(&blob);
        }
    }
}

fn read_matrix(buf: &[u8], cfg: FixedPointConfig) -> Result<(MatrixData, usize)> {
    if buf.len() < 5 {
        return Err(Error::MalformedFrame("matrix payload truncated".into()));
    }
    let kind = buf[0];
    let len = u32::from_le_bytes(buf[1..5].try_into().unwrap()) as usize;
    if buf.len() < 5 + len {
        return Err(Error::MalformedFrame("matrix payload truncated".into()));
    }
    let blob = &buf[5..5 + len];
    let m = match kind {
        KIND_DENSE => MatrixData::Dense(RingMatrix::from_bytes(blob, cfg)?),
        KIND_SPARSE => MatrixData::Sparse(SparseRingMatrix::from_bytes(blob, cfg)?),
        other => {
            return Err(Error::MalformedFrame(format!(
                "unknown matrix payload kind {other}"
            )))
        }
    };
    Ok((m, 5 + len))
}

fn encode_pair(a: &MatrixData, b: &MatrixData, cfg: FixedPointConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    write_matrix(&mut buf, a, cfg);
    write_matrix(&mut buf, b, cfg);
    buf
}

fn decode_pair(buf: &[u8], cfg: FixedPointConfig) -> Result<(MatrixData, MatrixData)> {
    let (first, used) = read_matrix(buf, cfg)?;
    let (second, used2) = read_matrix(&buf[used..], cfg)?;
    if used + used2 != buf.len() {
        return Err(Error::MalformedFrame(
            "trailing bytes after matrix pair".into(),
        ));
    }
    Ok((first, second))
}

impl LeftBundle {
    pub fn to_payload(&self, cfg: FixedPointConfig) -> Vec<u8> {
        encode_pair(
            &MatrixData::Dense(self.masked.clone()),
            &MatrixData::Dense(self.folded.clone()),
            cfg,
        )
    }

    pub fn from_payload(buf: &[u8], cfg: FixedPointConfig) -> Result<Self> {
        let (masked, folded) = decode_pair(buf, cfg)?;
        match (masked, folded) {
            (MatrixData::Dense(masked), MatrixData::Dense(folded)) => Ok(Self { masked, folded }),
            _ => Err(Error::MalformedFrame("left bundle must be dense".into())),
        }
    }
}

impl RightBundle {
    pub fn to_payload(&self, cfg: FixedPointConfig) -> Vec<u8> {
        encode_pair(&self.masked, &self.folded, cfg)
    }

    pub fn from_payload(buf: &[u8], cfg: FixedPointConfig) -> Result<Self> {
        let (masked, folded) = decode_pair(buf, cfg)?;
        Ok(Self { masked, folded })
    }
}

// --- channel drivers --------------------------------------------------------

/// Run the left side over a channel and return `P * Q` (exact ring product).
/// Pads the inner dimension to even before anything is sent.
pub fn ssmm_left(
    p: &RingMatrix,
    cfg: FixedPointConfig,
    ch: &mut dyn Channel,
    masks: &mut MaskSource,
    session_id: u64,
) -> Result<RingMatrix> {
    let p = if p.cols() % 2 == 0 {
        p.clone()
    } else {
        p.pad_col()
    };
    let (session, bundle) = left_start(&p, cfg, masks);
    ch.send_frame(&Frame::new(
        MsgType::BundleA,
        session_id,
        bundle.to_payload(cfg),
    ))?;
    let rb_frame = expect_frame(ch, MsgType::BundleB, session_id)?;
    let rb = RightBundle::from_payload(&rb_frame.payload, cfg)?;
    let m = session.finish(&rb)?;
    let n_frame = expect_frame(ch, MsgType::NMatrix, session_id)?;
    let n = RingMatrix::from_bytes(&n_frame.payload, cfg)?;
    if (n.rows(), n.cols()) != (m.rows(), m.cols()) {
        return Err(Error::Dimension(format!(
            "peer cross term is {}x{}, expected {}x{}",
            n.rows(),
            n.cols(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(LeftSession::reveal(&m, &n, cfg))
}

/// Byte counts of the shares a sparse right bundle put on the wire.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RightShareReport {
    pub masked_nnz: usize,
    pub folded_nnz: usize,
}

/// Run the right side over a channel, adopting the session id of the
/// incoming share bundle. The product is revealed to the left party only.
/// Returns the share sizes for communication accounting.
pub fn ssmm_right(
    q: &MatrixData,
    policy: &MaskPolicy,
    cfg: FixedPointConfig,
    ch: &mut dyn Channel,
    masks: &mut MaskSource,
) -> Result<RightShareReport> {
    let q = pad_right_even(q);
    let lb_frame = ch.recv_frame()?;
    if lb_frame.msg_type != MsgType::BundleA {
        return Err(Error::Protocol(format!(
            "expected BundleA frame, got {:?}",
            lb_frame.msg_type
        )));
    }
    let session_id = lb_frame.session_id;
    let lb = LeftBundle::from_payload(&lb_frame.payload, cfg)?;
    if lb.masked.cols() != q.rows() {
        return Err(Error::Dimension(format!(
            "left factor width {} does not match right height {}",
            lb.masked.cols(),
            q.rows()
        )));
    }
    let (session, bundle) = right_start(&q, policy, cfg, masks);
    let report = bundle_report(&bundle);
    ch.send_frame(&Frame::new(
        MsgType::BundleB,
        session_id,
        bundle.to_payload(cfg),
    ))?;
    let n = session.finish(&lb)?;
    ch.send_frame(&Frame::new(MsgType::NMatrix, session_id, n.to_bytes(cfg)))?;
    Ok(report)
}

pub(crate) fn pad_right_even(q: &MatrixData) -> MatrixData {
    if q.rows() % 2 == 0 {
        q.clone()
    } else {
        match q {
            MatrixData::Dense(m) => m.pad_row().into(),
            MatrixData::Sparse(m) => m.pad_row().into(),
        }
    }
}

fn bundle_report(bundle: &RightBundle) -> RightShareReport {
    match (&bundle.masked, &bundle.folded) {
        (MatrixData::Sparse(m), MatrixData::Sparse(f)) => RightShareReport {
            masked_nnz: m.nnz(),
            folded_nnz: f.nnz(),
        },
        _ => RightShareReport::default(),
    }
}

fn expect_frame(ch: &mut dyn Channel, want: MsgType, session_id: u64) -> Result<Frame> {
    let frame = ch.recv_frame()?;
    if frame.msg_type != want {
        return Err(Error::Protocol(format!(
            "expected {want:?} frame, got {:?}",
            frame.msg_type
        )));
    }
    if frame.session_id != session_id {
        return Err(Error::Protocol(format!(
            "expected session {session_id}, got {}",
            frame.session_id
        )));
    }
    Ok(frame)
}

/// Run the whole protocol in-process over a loopback pair, the right party
/// on its own thread. Dimensions are checked before any message is sent.
pub fn ssmm_execute(
    p: &RingMatrix,
    q: &MatrixData,
    policy: &MaskPolicy,
    cfg: FixedPointConfig,
    seed: u64,
) -> Result<RingMatrix> {
    if p.cols() != q.rows() {
        return Err(Error::Dimension(format!(
            "inner dimensions differ: {} vs {}",
            p.cols(),
            q.rows()
        )));
    }
    let (mut ch_l, mut ch_r) = crate::transport::loopback_pair();
    let q = q.clone();
    let policy = *policy;
    let right = std::thread::spawn(move || {
        let mut masks = MaskSource::from_seed(seed ^ 0x5eed_0001);
        ssmm_right(&q, &policy, cfg, &mut ch_r, &mut masks)
    });
    let mut masks = MaskSource::from_seed(seed);
    let product = ssmm_left(p, cfg, &mut ch_l, &mut masks, 0);
    let right_res = right
        .join()
        .map_err(|_| Error::Protocol("right party thread panicked".into()))?;
    right_res?;
    product
}

// --- trusted-initializer baseline -------------------------------------------

/// One party's additive shares of a multiplication triple (A0, B0, C0) with
/// `C0 = A0 * B0`. Single-use: consuming protocols mark it spent.
#[derive(Clone, Debug)]
pub struct TripleShares {
    pub a: RingMatrix,
    pub b: RingMatrix,
    pub c: RingMatrix,
    used: bool,
}

impl TripleShares {
    fn take(&mut self) -> Result<()> {
        if self.used {
            return Err(Error::Protocol(
                "multiplication triple already consumed".into(),
            ));
        }
        self.used = true;
        Ok(())
    }

    pub fn is_used(&self) -> bool {
        self.used
    }
}

/// Third role that pre-distributes correlated randomness and then takes no
/// part in the protocol. In-process; deterministic from its seed.
pub struct TrustedInitializer {
    masks: MaskSource,
    cfg: FixedPointConfig,
}

impl TrustedInitializer {
    pub fn from_seed(seed: u64, cfg: FixedPointConfig) -> Self {
        Self {
            masks: MaskSource::from_seed(seed),
            cfg,
        }
    }

    /// Issue triple shares for one product of the given shape.
    pub fn issue(&mut self, x: usize, y: usize, z: usize) -> Result<(TripleShares, TripleShares)> {
        let cfg = self.cfg;
        let a0 = self.masks.uniform_matrix(x, y, cfg);
        let b0 = self.masks.uniform_matrix(y, z, cfg);
        let c0 = a0.matmul(&b0, cfg)?;
        let a_share = self.masks.uniform_matrix(x, y, cfg);
        let b_share = self.masks.uniform_matrix(y, z, cfg);
        let c_share = self.masks.uniform_matrix(x, z, cfg);
        let left = TripleShares {
            a: a0.sub(&a_share, cfg),
            b: b0.sub(&b_share, cfg),
            c: c0.sub(&c_share, cfg),
            used: false,
        };
        let right = TripleShares {
            a: a_share,
            b: b_share,
            c: c_share,
            used: false,
        };
        Ok((left, right))
    }
}

/// Beaver-style left party: holds P, ends with its additive share M of P*Q.
///
/// The product X*Y is computed for X shared as (P, 0) and Y as (0, Q); both
/// parties open `E = X - A0` and `F = Y - B0` and combine with the triple.
pub fn tismm_left(
    p: &RingMatrix,
    triple: &mut TripleShares,
    cfg: FixedPointConfig,
    ch: &mut dyn Channel,
    session_id: u64,
) -> Result<RingMatrix> {
    triple.take()?;
    if (triple.a.rows(), triple.a.cols()) != (p.rows(), p.cols()) {
        return Err(Error::Dimension(format!(
            "triple issued for {}x{}, left factor is {}x{}",
            triple.a.rows(),
            triple.a.cols(),
            p.rows(),
            p.cols()
        )));
    }
    let e_share = p.sub(&triple.a, cfg);
    let f_share = RingMatrix::zeros(triple.b.rows(), triple.b.cols()).sub(&triple.b, cfg);
    ch.send_frame(&Frame::new(
        MsgType::BundleA,
        session_id,
        encode_pair(&e_share.clone().into(), &f_share.clone().into(), cfg),
    ))?;
    let theirs = expect_frame(ch, MsgType::BundleB, session_id)?;
    let (e_other, f_other) = decode_pair(&theirs.payload, cfg)?;
    let e = e_share.add(&e_other.to_dense(), cfg);
    let f = f_share.add(&f_other.to_dense(), cfg);
    // share of X*Y: C0_i + E*B0_i + A0_i*F, with the public E*F added once
    let mut m = triple.c.add(&e.matmul(&triple.b, cfg)?, cfg);
    m = m.add(&triple.a.matmul(&f, cfg)?, cfg);
    m = m.add(&e.matmul(&f, cfg)?, cfg);
    Ok(m)
}

/// Beaver-style right party: holds Q, ends with its additive share N.
pub fn tismm_right(
    q: &RingMatrix,
    triple: &mut TripleShares,
    cfg: FixedPointConfig,
    ch: &mut dyn Channel,
    session_id: u64,
) -> Result<RingMatrix> {
    triple.take()?;
    if (triple.b.rows(), triple.b.cols()) != (q.rows(), q.cols()) {
        return Err(Error::Dimension(format!(
            "triple issued for {}x{}, right factor is {}x{}",
            triple.b.rows(),
            triple.b.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let e_share = RingMatrix::zeros(triple.a.rows(), triple.a.cols()).sub(&triple.a, cfg);
    let f_share = q.sub(&triple.b, cfg);
    let theirs = expect_frame(ch, MsgType::BundleA, session_id)?;
    ch.send_frame(&Frame::new(
        MsgType::BundleB,
        session_id,
        encode_pair(&e_share.clone().into(), &f_share.clone().into(), cfg),
    ))?;
    let (e_other, f_other) = decode_pair(&theirs.payload, cfg)?;
    let e = e_share.add(&e_other.to_dense(), cfg);
    let f = f_share.add(&f_other.to_dense(), cfg);
    let mut n = triple.c.add(&e.matmul(&triple.b, cfg)?, cfg);
    n = n.add(&triple.a.matmul(&f, cfg)?, cfg);
    Ok(n)
}

/// In-process Beaver baseline; returns the additive shares (M, N) with
/// `M + N = P * Q`.
pub fn tismm_execute(
    p: &RingMatrix,
    q: &RingMatrix,
    cfg: FixedPointConfig,
    seed: u64,
) -> Result<(RingMatrix, RingMatrix)> {
    if p.cols() != q.rows() {
        return Err(Error::Dimension(format!(
            "inner dimensions differ: {} vs {}",
            p.cols(),
            q.rows()
        )));
    }
    let mut init = TrustedInitializer::from_seed(seed ^ 0x7319_1e55, cfg);
    let (mut left_triple, mut right_triple) = init.issue(p.rows(), p.cols(), q.cols())?;
    let (mut ch_l, mut ch_r) = crate::transport::loopback_pair();
    let q = q.clone();
    let right = std::thread::spawn(move || tismm_right(&q, &mut right_triple, cfg, &mut ch_r, 0));
    let m = tismm_left(p, &mut left_triple, cfg, &mut ch_l, 0)?;
    let n = right
        .join()
        .map_err(|_| Error::Protocol("right party thread panicked".into()))??;
    Ok((m, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{decode_fixed, encode_fixed};
    use crate::stats::chi_square_uniform;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    fn random_matrix(rows: usize, cols: usize, masks: &mut MaskSource) -> RingMatrix {
        masks.uniform_matrix(rows, cols, cfg())
    }

    #[test]
    fn share_scalar_reconstructs() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(1);
        for _ in 0..10_000 {
            let x = RingElem(masks.rng().gen::<u64>() & c.mask());
            let (a, b) = share_scalar(x, c, masks.rng());
            assert_eq!(reconstruct_scalar(a, b, c), x);
        }
    }

    #[test]
    fn share_of_zero_is_still_uniformly_masked() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(2);
        let mut counts = vec![0u64; 256];
        for _ in 0..100_000 {
            let (_, b) = share_scalar(RingElem(0), c, masks.rng());
            counts[(b.0 >> 56) as usize] += 1;
        }
        let p = chi_square_uniform(&counts);
        assert!(p > 0.01, "top-byte uniformity p = {p}");
    }

    #[test]
    fn pad_even_preserves_product() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(3);
        let p = random_matrix(2, 3, &mut masks);
        let q = random_matrix(3, 4, &mut masks);
        let (pp, qp) = pad_even(&p, &q).unwrap();
        assert_eq!(pp.cols(), 4);
        assert_eq!(qp.rows(), 4);
        assert_eq!(pp.matmul(&qp, c).unwrap(), p.matmul(&q, c).unwrap());
        let even_p = random_matrix(2, 4, &mut masks);
        let even_q = random_matrix(4, 2, &mut masks);
        let (same_p, same_q) = pad_even(&even_p, &even_q).unwrap();
        assert_eq!(same_p, even_p);
        assert_eq!(same_q, even_q);
        assert!(pad_even(&p, &even_q).is_err());
    }

    #[test]
    fn masked_left_entries_look_uniform() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(40);
        let p = RingMatrix::from_fn(2, 2, |r, col| (r * 2 + col) as u64 + 1);
        let mut counts = vec![0u64; 256];
        for _ in 0..25_000 {
            let (_, bundle) = left_start(&p, c, &mut masks);
            for r in 0..2 {
                for col in 0..2 {
                    counts[(bundle.masked.get(r, col).0 >> 56) as usize] += 1;
                }
            }
        }
        let p_value = chi_square_uniform(&counts);
        assert!(p_value > 0.01, "masked entries non-uniform: p = {p_value}");
    }

    #[test]
    fn zero_left_factor_bundle_is_pure_mask() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(4);
        let p = RingMatrix::zeros(3, 4);
        let (session, bundle) = left_start(&p, c, &mut masks);
        assert_eq!(bundle.masked, session.mask);
        assert_eq!(bundle.masked.rows(), 3);
        assert_eq!(bundle.masked.cols(), 4);
        assert_eq!(bundle.folded.cols(), 2);
    }

    #[test]
    fn cross_terms_reconstruct_exact_product() {
        let c = cfg();
        let mut masks_l = MaskSource::from_seed(5);
        let mut masks_r = MaskSource::from_seed(6);
        for (x, y, z) in [(1, 2, 1), (2, 2, 2), (3, 4, 5), (7, 8, 3)] {
            let p = masks_l.uniform_matrix(x, y, c);
            let q = masks_r.uniform_matrix(y, z, c);
            let (ls, lb) = left_start(&p, c, &mut masks_l);
            let (rs, rb) = right_start(&q.clone().into(), &MaskPolicy::dense(), c, &mut masks_r);
            let m = ls.finish(&rb).unwrap();
            let n = rs.finish(&lb).unwrap();
            assert_eq!(
                LeftSession::reveal(&m, &n, c),
                p.matmul(&q, c).unwrap(),
                "dims {x}x{y}x{z}"
            );
        }
    }

    #[test]
    fn exhaustive_small_modulus_identity() {
        // every (P, Q) input combination at 1x2x1 over Z_16
        let c = FixedPointConfig::new(32, 2).unwrap();
        let vals = 0u64..16;
        for p0 in vals.clone() {
            for p1 in vals.clone() {
                for q0 in vals.clone() {
                    for q1 in vals.clone() {
                        let p = RingMatrix::from_raw(1, 2, vec![p0, p1]).unwrap();
                        let q = RingMatrix::from_raw(2, 1, vec![q0, q1]).unwrap();
                        let mut masks = MaskSource::from_seed(p0 ^ (q0 << 8) ^ (p1 << 16));
                        let (ls, lb) = left_start(&p, c, &mut masks);
                        let (rs, rb) =
                            right_start(&q.clone().into(), &MaskPolicy::dense(), c, &mut masks);
                        let m = ls.finish(&rb).unwrap();
                        let n = rs.finish(&lb).unwrap();
                        let got = LeftSession::reveal(&m, &n, c).get(0, 0).0 & 0xf;
                        let want = (p0 * q0 + p1 * q1) & 0xf;
                        assert_eq!(got, want, "p=({p0},{p1}) q=({q0},{q1})");
                    }
                }
            }
        }
        // all dims up to 4 at the same modulus, randomized inputs
        let mut masks = MaskSource::from_seed(0xd1);
        for x in 1..=4usize {
            for y in (2..=4usize).step_by(2) {
                for z in 1..=4usize {
                    let p = masks.uniform_matrix(x, y, c);
                    let q = masks.uniform_matrix(y, z, c);
                    let (ls, lb) = left_start(&p, c, &mut masks);
                    let (rs, rb) =
                        right_start(&q.clone().into(), &MaskPolicy::dense(), c, &mut masks);
                    let m = ls.finish(&rb).unwrap();
                    let n = rs.finish(&lb).unwrap();
                    assert_eq!(LeftSession::reveal(&m, &n, c), p.matmul(&q, c).unwrap());
                }
            }
        }
    }

    #[test]
    fn dense_exchange_bytes_match_closed_form() {
        let c = cfg();
        let (x, y, z) = (3, 6, 4);
        let (mut left, mut right) = crate::transport::loopback_pair();
        let mut masks = MaskSource::from_seed(50);
        let p = masks.uniform_matrix(x, y, c);
        let q = masks.uniform_matrix(y, z, c);
        let server = std::thread::spawn(move || {
            let mut masks = MaskSource::from_seed(51);
            ssmm_right(&q.into(), &MaskPolicy::dense(), c, &mut right, &mut masks).unwrap();
            right.stats()
        });
        ssmm_left(&p, c, &mut left, &mut masks, 0).unwrap();
        let right_stats = server.join().unwrap();
        let left_stats = left.stats();

        use crate::transport::FRAME_HEADER_BYTES;
        let sent = FRAME_HEADER_BYTES + dense_payload_len(x, y, c) + dense_payload_len(x, y / 2, c);
        let recv = FRAME_HEADER_BYTES
            + dense_payload_len(y, z, c)
            + dense_payload_len(y / 2, z, c)
            + FRAME_HEADER_BYTES
            + RingMatrix::byte_len(x, z, c);
        assert_eq!(left_stats.bytes_sent as usize, sent);
        assert_eq!(left_stats.bytes_received as usize, recv);
        // the two endpoints agree on what crossed the wire
        assert_eq!(right_stats.bytes_received, left_stats.bytes_sent);
        assert_eq!(right_stats.bytes_sent, left_stats.bytes_received);
        assert_eq!(left_stats.frames_sent, 1);
        assert_eq!(left_stats.frames_received, 2);
    }

    #[test]
    fn sparse_mode_share_support_is_nonzeros_plus_decoys() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(7);
        let z = 40;
        let mut q = SparseRingMatrix::new(6, z);
        // rows with 0, 1, 2, 3, 5, 8 nonzeros
        let counts = [0usize, 1, 2, 3, 5, 8];
        for (r, &d) in counts.iter().enumerate() {
            for k in 0..d {
                q.push(r, (k * 3) as u32, encode_fixed(1.0, c).unwrap().0);
            }
        }
        q.sort_rows();
        let policy = MaskPolicy::sparse();
        let (_, bundle) = right_start(&q.clone().into(), &policy, c, &mut masks);
        let masked = match &bundle.masked {
            MatrixData::Sparse(m) => m.clone(),
            _ => panic!("sparse policy must produce sparse shares"),
        };
        for (r, &d) in counts.iter().enumerate() {
            let want = d + policy.decoys(d, z);
            assert_eq!(masked.row_nnz(r), want, "row {r}");
        }
        // empty row is hidden behind the decoy minimum
        assert_eq!(masked.row_nnz(0), 4);
    }

    #[test]
    fn zero_decoy_ratio_keeps_share_support_on_the_mask_support() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(44);
        let z = 30;
        let mut q = SparseRingMatrix::new(4, z);
        for r in 0..4usize {
            for k in 0..(r + 1) {
                q.push(r, (k * 5) as u32, encode_fixed(0.5, c).unwrap().0);
            }
        }
        q.sort_rows();
        let policy = MaskPolicy {
            mode: MaskMode::Sparse,
            d_prime_ratio: 0.0,
        };
        let (_, bundle) = right_start(&q.clone().into(), &policy, c, &mut masks);
        let masked = match &bundle.masked {
            MatrixData::Sparse(m) => m.clone(),
            _ => panic!("sparse policy must produce sparse shares"),
        };
        // no decoys on occupied rows: share support equals the input support
        for r in 0..4usize {
            let share_cols: Vec<u32> = masked.row(r).iter().map(|&(col, _)| col).collect();
            let q_cols: Vec<u32> = q.row(r).iter().map(|&(col, _)| col).collect();
            assert_eq!(share_cols, q_cols, "row {r}");
        }
    }

    #[test]
    fn sparse_mode_product_matches_dense_mode() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(8);
        let p = masks.uniform_matrix(3, 6, c);
        let mut q = SparseRingMatrix::new(6, 9);
        q.push(0, 2, 5);
        q.push(1, 0, 11);
        q.push(3, 8, 17);
        q.push(4, 4, 23);
        q.sort_rows();
        let want = p.matmul(&q.to_dense(), c).unwrap();
        for policy in [MaskPolicy::dense(), MaskPolicy::sparse()] {
            let got = ssmm_execute(&p, &q.clone().into(), &policy, c, 99).unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn identity_left_factor_reveals_right_factor() {
        let c = cfg();
        let scale = 1u64 << c.frac_bits();
        let p = RingMatrix::identity_scaled(4, scale);
        let q = DMatrix::from_fn(4, 3, |r, col| (r as f64) - 0.5 * col as f64);
        let q_ring = RingMatrix::encode(&q, c).unwrap();
        let raw = ssmm_execute(&p, &q_ring.clone().into(), &MaskPolicy::dense(), c, 12).unwrap();
        let decoded = raw.truncate(c).decode(c);
        assert_eq!(decoded, q);
    }

    #[test]
    fn execute_rejects_dimension_mismatch_before_sending() {
        let c = cfg();
        let p = RingMatrix::zeros(2, 4);
        let q = RingMatrix::zeros(6, 2);
        assert!(matches!(
            ssmm_execute(&p, &q.into(), &MaskPolicy::dense(), c, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn left_leakage_is_exactly_even_minus_odd_rows() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(9);
        for _ in 0..50 {
            let q = masks.uniform_matrix(6, 4, c);
            let (_, rb) = right_start(&q.clone().into(), &MaskPolicy::dense(), c, &mut masks);
            let (q_odd, q_even) = q.odd_even_rows();
            assert_eq!(left_leakage(&rb, c), q_even.sub(&q_odd, c));
        }
        // equal even/odd rows leak a zero matrix
        let q = RingMatrix::from_fn(4, 3, |r, col| ((r / 2) * 10 + col) as u64);
        let (_, rb) = right_start(&q.into(), &MaskPolicy::dense(), c, &mut masks);
        assert_eq!(left_leakage(&rb, c), RingMatrix::zeros(2, 3));
    }

    #[test]
    fn right_leakage_is_exactly_even_plus_odd_cols() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(10);
        for _ in 0..50 {
            let p = masks.uniform_matrix(3, 6, c);
            let (_, lb) = left_start(&p, c, &mut masks);
            let (p_odd, p_even) = p.odd_even_cols();
            assert_eq!(right_leakage(&lb, c), p_even.add(&p_odd, c));
        }
    }

    #[test]
    fn fresh_masks_every_invocation() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(11);
        let p = RingMatrix::zeros(2, 4);
        let before = masks.draws();
        let (_, b1) = left_start(&p, c, &mut masks);
        let mid = masks.draws();
        let (_, b2) = left_start(&p, c, &mut masks);
        assert!(mid > before && masks.draws() > mid);
        // P = 0, so the masked matrices are the masks themselves
        assert_ne!(b1.masked, b2.masked);
    }

    #[test]
    fn bundle_payload_roundtrip() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(12);
        let p = masks.uniform_matrix(2, 4, c);
        let (_, lb) = left_start(&p, c, &mut masks);
        let back = LeftBundle::from_payload(&lb.to_payload(c), c).unwrap();
        assert_eq!(back, lb);

        let mut q = SparseRingMatrix::new(4, 3);
        q.push(1, 2, 9);
        q.sort_rows();
        let (_, rb) = right_start(&q.into(), &MaskPolicy::sparse(), c, &mut masks);
        let back = RightBundle::from_payload(&rb.to_payload(c), c).unwrap();
        assert_eq!(back, rb);
    }

    #[test]
    fn tismm_reconstructs_product() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(13);
        for i in 0..50u64 {
            let x = 1 + (i % 5) as usize;
            let y = 1 + (i % 6) as usize;
            let z = 1 + (i % 4) as usize;
            let p = masks.uniform_matrix(x, y, c);
            let q = masks.uniform_matrix(y, z, c);
            let (m, n) = tismm_execute(&p, &q, c, 21 ^ i).unwrap();
            assert_eq!(m.add(&n, c), p.matmul(&q, c).unwrap());
        }
        // zero left factor
        let q = masks.uniform_matrix(3, 3, c);
        let (m, n) = tismm_execute(&RingMatrix::zeros(2, 3), &q, c, 22).unwrap();
        assert_eq!(m.add(&n, c), RingMatrix::zeros(2, 3));
    }

    #[test]
    fn tismm_triple_is_single_use() {
        let c = cfg();
        let mut init = TrustedInitializer::from_seed(14, c);
        let (mut left_t, mut right_t) = init.issue(2, 2, 2).unwrap();
        let p = RingMatrix::zeros(2, 2);
        let q = RingMatrix::zeros(2, 2);
        let (mut ch_l, mut ch_r) = crate::transport::loopback_pair();
        let right = std::thread::spawn(move || {
            tismm_right(&q, &mut right_t, c, &mut ch_r, 0).unwrap();
            right_t
        });
        tismm_left(&p, &mut left_t, c, &mut ch_l, 0).unwrap();
        let right_t = right.join().unwrap();
        assert!(left_t.is_used() && right_t.is_used());
        let err = tismm_left(&p, &mut left_t, c, &mut ch_l, 1);
        assert!(matches!(err, Err(Error::Protocol(_))));
    }

    #[test]
    fn tismm_rejects_triple_shape_mismatch() {
        let c = cfg();
        let mut init = TrustedInitializer::from_seed(15, c);
        let (mut left_t, _) = init.issue(2, 2, 2).unwrap();
        let p = RingMatrix::zeros(3, 2);
        let (mut ch_l, _ch_r) = crate::transport::loopback_pair();
        assert!(matches!(
            tismm_left(&p, &mut left_t, c, &mut ch_l, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fixed_point_product_decodes_within_bound() {
        let c = cfg();
        let mut masks = MaskSource::from_seed(16);
        let y = 8;
        let p_real = DMatrix::from_fn(8, y, |_, _| quantized(masks.rng().gen_range(-4.0..4.0), c));
        let q_real = DMatrix::from_fn(y, 8, |_, _| quantized(masks.rng().gen_range(-4.0..4.0), c));
        let p = RingMatrix::encode(&p_real, c).unwrap();
        let q = RingMatrix::encode(&q_real, c).unwrap();
        let raw = ssmm_execute(&p, &q.into(), &MaskPolicy::dense(), c, 31).unwrap();
        let got = raw.truncate(c).decode(c);
        let want = &p_real * &q_real;
        let bound = y as f64 * 2f64.powi(-(c.frac_bits() as i32) + 1);
        for r in 0..8 {
            for col in 0..8 {
                assert!(
                    (got[(r, col)] - want[(r, col)]).abs() <= bound,
                    "entry ({r},{col}): {} vs {}",
                    got[(r, col)],
                    want[(r, col)]
                );
            }
        }
    }

    fn quantized(x: f64, c: FixedPointConfig) -> f64 {
        decode_fixed(encode_fixed(x, c).unwrap(), c)
    }
}
