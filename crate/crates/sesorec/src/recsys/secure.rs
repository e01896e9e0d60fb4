//! The two-party secure path: the rating party obtains the three social
//! products through the masked matrix product protocol, and the social party
//! serves masked shares built from its private graph.
//!
//! Per batch the rating party announces the batch users, then the parties
//! run three product sessions in a fixed order: the tie-strength diagonal,
//! the cross-user rows, and the backflow diagonal. Only the rating party
//! learns the products; the social party sees masked factor shares and the
//! batch user ids it anyway needs to build its matrices.
//!
//! An optional stale mode syncs the masked share of the full user factor
//! matrix once per epoch (`USync`) and reuses it for every batch's
//! cross-user product. That trades gradient freshness for one large
//! transfer per pass instead of one per batch; it is an approximation and
//! off by default.

use nalgebra::DMatrix;

use crate::data::{Rating, SocialGraph};
use crate::error::{Error, Result};
use crate::ring::{encode_fixed, FixedPointConfig, MatrixData, RingMatrix, SparseRingMatrix};
use crate::share::{
    left_start, pad_right_even, right_start, ssmm_left, ssmm_right, LeftBundle, LeftSession,
    MaskPolicy, MaskSource, RightBundle, RightShareReport,
};
use crate::transport::{Channel, ChannelStats, ControlMsg, Frame, MsgType};

use super::engine::{build_social_terms, SocialProducts, SocialTerms};
use super::train::SocialProductSource;

/// Security- and transport-related knobs of the secure trainer.
#[derive(Clone, Copy, Debug)]
pub struct SecureTrainConfig {
    pub fp: FixedPointConfig,
    /// Reuse one epoch-level share of U for the cross-user product.
    pub stale_u: bool,
    /// Seed of the rating party's mask source.
    pub mask_seed: u64,
}

impl Default for SecureTrainConfig {
    fn default() -> Self {
        Self {
            fp: FixedPointConfig::default(),
            stale_u: false,
            mask_seed: 0x6d61_736b,
        }
    }
}

/// Rating-party product source driving the protocol over one channel.
pub struct SecureSource<'c> {
    ch: &'c mut dyn Channel,
    fp: FixedPointConfig,
    stale_u: bool,
    masks: MaskSource,
    stale: Option<LeftSession>,
    batch_seq: u64,
    epoch_seq: u64,
}

impl<'c> SecureSource<'c> {
    pub fn new(ch: &'c mut dyn Channel, cfg: &SecureTrainConfig) -> Self {
        Self {
            ch,
            fp: cfg.fp,
            stale_u: cfg.stale_u,
            masks: MaskSource::from_seed(cfg.mask_seed),
            stale: None,
            batch_seq: 0,
            epoch_seq: 0,
        }
    }

    fn run_product(&mut self, p_real: &DMatrix<f64>, sid: u64) -> Result<DMatrix<f64>> {
        let p = RingMatrix::encode(p_real, self.fp)?;
        let raw = ssmm_left(&p, self.fp, self.ch, &mut self.masks, sid)?;
        Ok(raw.truncate(self.fp).decode(self.fp))
    }

    fn recv_stale_product(&mut self, sid: u64) -> Result<DMatrix<f64>> {
        let session = self
            .stale
            .as_ref()
            .ok_or_else(|| Error::Protocol("stale product requested before any sync".into()))?;
        let rb_frame = recv_expect(self.ch, MsgType::BundleB, sid)?;
        let rb = RightBundle::from_payload(&rb_frame.payload, self.fp)?;
        let m = session.cross_term(&rb)?;
        let n_frame = recv_expect(self.ch, MsgType::NMatrix, sid)?;
        let n = RingMatrix::from_bytes(&n_frame.payload, self.fp)?;
        if (n.rows(), n.cols()) != (m.rows(), m.cols()) {
            return Err(Error::Dimension(format!(
                "peer cross term is {}x{}, expected {}x{}",
                n.rows(),
                n.cols(),
                m.rows(),
                m.cols()
            )));
        }
        let raw = LeftSession::reveal(&m, &n, self.fp);
        Ok(raw.truncate(self.fp).decode(self.fp))
    }
}

impl SocialProductSource for SecureSource<'_> {
    fn epoch_start(&mut self, u: &DMatrix<f64>) -> Result<()> {
        if !self.stale_u {
            return Ok(());
        }
        self.epoch_seq += 1;
        let mut p = RingMatrix::encode(u, self.fp)?;
        if p.cols() % 2 == 1 {
            p = p.pad_col();
        }
        let (session, bundle) = left_start(&p, self.fp, &mut self.masks);
        self.ch.send_frame(&Frame::new(
            MsgType::USync,
            self.epoch_seq,
            bundle.to_payload(self.fp),
        ))?;
        self.stale = Some(session);
        Ok(())
    }

    fn batch_products(
        &mut self,
        batch_users: &[u32],
        u_full: &DMatrix<f64>,
        u_b: &DMatrix<f64>,
    ) -> Result<Option<SocialProducts>> {
        self.batch_seq += 1;
        let sid = self.batch_seq;
        let stale_s = self.stale_u;
        let msg = ControlMsg::Batch {
            users: batch_users.to_vec(),
            stale_s,
        };
        self.ch.send_frame(&msg.to_frame(sid))?;
        let self_weighted = self.run_product(u_b, sid)?;
        let cross = if stale_s {
            self.recv_stale_product(sid)?
        } else {
            self.run_product(u_full, sid)?
        };
        let back_weighted = self.run_product(u_b, sid)?;
        Ok(Some(SocialProducts {
            self_weighted,
            cross,
            back_weighted,
        }))
    }

    fn finish(&mut self) -> Result<()> {
        self.ch.send_frame(&ControlMsg::Done.to_frame(0))
    }

    fn bytes_communicated(&self) -> u64 {
        let stats = self.ch.stats();
        stats.bytes_sent + stats.bytes_received
    }
}

fn recv_expect(ch: &mut dyn Channel, want: MsgType, sid: u64) -> Result<Frame> {
    let frame = ch.recv_frame()?;
    if frame.msg_type != want {
        return Err(Error::Protocol(format!(
            "expected {want:?}, got {:?}",
            frame.msg_type
        )));
    }
    if frame.session_id != sid {
        return Err(Error::Protocol(format!(
            "expected session {sid}, got {}",
            frame.session_id
        )));
    }
    Ok(frame)
}

/// Sparse diagonal with the given real values encoded; exact zeros are left
/// structurally empty (the mask policy hides them behind decoys).
fn encode_diag(values: &[f64], cfg: FixedPointConfig) -> Result<SparseRingMatrix> {
    let m = values.len();
    let mut out = SparseRingMatrix::new(m, m);
    for (i, &v) in values.iter().enumerate() {
        if v != 0.0 {
            out.push(i, i as u32, encode_fixed(v, cfg)?.0);
        }
    }
    out.sort_rows();
    Ok(out)
}

/// The cross-user matrix for one batch: entry (f, b) is the tie strength
/// between user f and batch user b; num_users x batch_len.
fn encode_cross_rows(
    terms: &SocialTerms,
    num_users: usize,
    cfg: FixedPointConfig,
) -> Result<SparseRingMatrix> {
    let m = terms.rows.len();
    let mut out = SparseRingMatrix::new(num_users, m);
    for (b, row) in terms.rows.iter().enumerate() {
        for &(f, w) in row {
            out.push(f as usize, b as u32, encode_fixed(w, cfg)?.0);
        }
    }
    out.sort_rows();
    Ok(out)
}

/// Per-batch share accounting from the social side.
#[derive(Clone, Debug, Default)]
pub struct ServeSummary {
    pub batches: usize,
    pub products_served: usize,
    pub reports: Vec<RightShareReport>,
    pub stats: ChannelStats,
}

/// Social-party serve loop: answers batch announcements with masked share
/// exchanges until the rating party signals completion.
pub fn serve_social_party(
    ch: &mut dyn Channel,
    graph: &SocialGraph,
    fp: FixedPointConfig,
    policy: &MaskPolicy,
    masks: &mut MaskSource,
) -> Result<ServeSummary> {
    let mut summary = ServeSummary::default();
    let mut synced: Option<LeftBundle> = None;
    loop {
        let frame = ch.recv_frame()?;
        match frame.msg_type {
            MsgType::Control => match ControlMsg::from_frame(&frame)? {
                ControlMsg::Batch { users, stale_s } => {
                    let sid = frame.session_id;
                    let terms = build_social_terms(graph, &users)?;

                    let q_d = encode_diag(&terms.row_sums, fp)?;
                    summary
                        .reports
                        .push(ssmm_right(&q_d.into(), policy, fp, ch, masks)?);

                    let q_s = encode_cross_rows(&terms, graph.num_users(), fp)?;
                    if stale_s {
                        let lb = synced.as_ref().ok_or_else(|| {
                            Error::Protocol("stale product requested before any sync".into())
                        })?;
                        summary.reports.push(respond_from_synced(
                            ch,
                            lb,
                            &q_s.into(),
                            policy,
                            fp,
                            masks,
                            sid,
                        )?);
                    } else {
                        summary
                            .reports
                            .push(ssmm_right(&q_s.into(), policy, fp, ch, masks)?);
                    }

                    let q_e = encode_diag(&terms.back_sums, fp)?;
                    summary
                        .reports
                        .push(ssmm_right(&q_e.into(), policy, fp, ch, masks)?);

                    summary.batches += 1;
                    summary.products_served += 3;
                }
                ControlMsg::Done => break,
                other => {
                    return Err(Error::Protocol(format!(
                        "unexpected control message {other:?}"
                    )))
                }
            },
            MsgType::USync => {
                synced = Some(LeftBundle::from_payload(&frame.payload, fp)?);
            }
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected frame {other:?} while serving"
                )))
            }
        }
    }
    summary.stats = ch.stats();
    Ok(summary)
}

/// Answer one cross-user product against the epoch-synced left bundle: a
/// fresh right mask every batch, no new left message.
fn respond_from_synced(
    ch: &mut dyn Channel,
    lb: &LeftBundle,
    q: &MatrixData,
    policy: &MaskPolicy,
    fp: FixedPointConfig,
    masks: &mut MaskSource,
    sid: u64,
) -> Result<RightShareReport> {
    let q = pad_right_even(q);
    if lb.masked.cols() != q.rows() {
        return Err(Error::Dimension(format!(
            "synced factor width {} does not match social height {}",
            lb.masked.cols(),
            q.rows()
        )));
    }
    let (session, bundle) = right_start(&q, policy, fp, masks);
    let report = match (&bundle.masked, &bundle.folded) {
        (MatrixData::Sparse(m), MatrixData::Sparse(f)) => RightShareReport {
            masked_nnz: m.nnz(),
            folded_nnz: f.nnz(),
        },
        _ => RightShareReport::default(),
    };
    ch.send_frame(&Frame::new(MsgType::BundleB, sid, bundle.to_payload(fp)))?;
    let n = session.finish(lb)?;
    ch.send_frame(&Frame::new(MsgType::NMatrix, sid, n.to_bytes(fp)))?;
    Ok(report)
}

/// Secure training with both parties in-process over a loopback channel;
/// the social party runs on its own thread. Identical training code to the
/// TCP two-process mode, only the channel factory differs.
pub fn train_secure_loopback(
    ratings: &[Rating],
    num_users: usize,
    num_items: usize,
    graph: &SocialGraph,
    hp: &super::engine::Hyperparams,
    cfg: &SecureTrainConfig,
    policy: &MaskPolicy,
) -> Result<(super::engine::LatentFactors, super::train::TrainLog)> {
    let (mut ch_a, mut ch_b) = crate::transport::loopback_pair();
    let graph_b = graph.clone();
    let fp = cfg.fp;
    let policy_b = *policy;
    let right_seed = cfg.mask_seed ^ 0x0513_beef;
    let server = std::thread::spawn(move || -> Result<ServeSummary> {
        crate::transport::handshake(&mut ch_b, fp)?;
        let mut masks = MaskSource::from_seed(right_seed);
        serve_social_party(&mut ch_b, &graph_b, fp, &policy_b, &mut masks)
    });
    crate::transport::handshake(&mut ch_a, fp)?;
    let result = train_secure_over_channel(&mut ch_a, ratings, num_users, num_items, hp, cfg);
    let served = server
        .join()
        .map_err(|_| Error::Protocol("social party thread panicked".into()))?;
    served?;
    result
}

/// Rating-party side of secure training over an established channel
/// (already handshaken). Used by both the loopback helper and the TCP CLI.
pub fn train_secure_over_channel(
    ch: &mut dyn Channel,
    ratings: &[Rating],
    num_users: usize,
    num_items: usize,
    hp: &super::engine::Hyperparams,
    cfg: &SecureTrainConfig,
) -> Result<(super::engine::LatentFactors, super::train::TrainLog)> {
    let mut source = SecureSource::new(ch, cfg);
    super::train::train(ratings, num_users, num_items, hp, &mut source)
}
